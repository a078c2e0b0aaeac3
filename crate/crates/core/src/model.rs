//! Domain types and the reconstruction machinery every other module consumes.
//!
//! A fitted model approximates each subject's correlation matrix at every
//! level `r` of the hierarchy as `Y_r L_ri Y_r^T`, where `Y_r = W_1 .. W_r`
//! is the cumulative component product and `L_ri` is a nonnegative diagonal
//! loading with unit trace. Loadings are stored as dense vectors; all the
//! update formulas only ever touch the diagonal.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Per-subject multivariate time series: rows are time points, columns nodes.
/// Subjects may have different lengths but share the node count.
#[derive(Debug, Clone)]
pub struct TimeSeriesPanel {
    subjects: Vec<Array2<f64>>,
    node_count: usize,
}

impl TimeSeriesPanel {
    pub fn new(subjects: Vec<Array2<f64>>) -> Result<Self> {
        let node_count = subjects
            .first()
            .map(|m| m.ncols())
            .ok_or_else(|| Error::InvalidParams("panel has no subjects".into()))?;
        for (i, m) in subjects.iter().enumerate() {
            if m.ncols() != node_count {
                return Err(Error::DimensionMismatch(format!(
                    "subject {i} has {} nodes, expected {node_count}",
                    m.ncols()
                )));
            }
            if m.nrows() < 2 {
                return Err(Error::InvalidParams(format!(
                    "subject {i} has {} time points, need at least 2",
                    m.nrows()
                )));
            }
            if !m.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteInput(format!("time series of subject {i}")));
            }
        }
        Ok(Self { subjects, node_count })
    }

    pub fn subjects(&self) -> &[Array2<f64>] {
        &self.subjects
    }

    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }
}

/// A set of per-subject symmetric correlation matrices.
#[derive(Debug, Clone)]
pub struct CorrelationSet {
    matrices: Vec<Array2<f64>>,
    node_count: usize,
}

impl CorrelationSet {
    /// Validated constructor: symmetry and unit diagonal within 1e-10,
    /// off-diagonal entries in [-1, 1]. Use for ingested correlation data.
    pub fn new(matrices: Vec<Array2<f64>>) -> Result<Self> {
        let set = Self::from_matrices_unchecked(matrices)?;
        for (i, m) in set.matrices.iter().enumerate() {
            let p = set.node_count;
            for a in 0..p {
                let d = m[[a, a]];
                if (d - 1.0).abs() > 1e-10 {
                    return Err(Error::InvalidParams(format!(
                        "subject {i}: diagonal entry ({a},{a}) = {d}, expected 1"
                    )));
                }
                for b in (a + 1)..p {
                    if (m[[a, b]] - m[[b, a]]).abs() > 1e-10 {
                        return Err(Error::InvalidParams(format!(
                            "subject {i}: matrix not symmetric at ({a},{b})"
                        )));
                    }
                    if m[[a, b]].abs() > 1.0 + 1e-10 {
                        return Err(Error::InvalidParams(format!(
                            "subject {i}: entry ({a},{b}) = {} outside [-1,1]",
                            m[[a, b]]
                        )));
                    }
                }
            }
        }
        Ok(set)
    }

    /// Shape-checked constructor without correlation-specific validation.
    /// Used for perturbed sets and synthetic planted instances, which are
    /// correlation-shaped but intentionally violate unit diagonal or bounds.
    pub fn from_matrices_unchecked(matrices: Vec<Array2<f64>>) -> Result<Self> {
        let node_count = matrices
            .first()
            .map(|m| m.nrows())
            .ok_or_else(|| Error::InvalidParams("correlation set has no subjects".into()))?;
        for (i, m) in matrices.iter().enumerate() {
            if m.nrows() != node_count || m.ncols() != node_count {
                return Err(Error::DimensionMismatch(format!(
                    "subject {i} matrix is {}x{}, expected {node_count}x{node_count}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if !m.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteInput(format!("matrix of subject {i}")));
            }
        }
        Ok(Self { matrices, node_count })
    }

    pub fn matrices(&self) -> &[Array2<f64>] {
        &self.matrices
    }

    pub fn subject_count(&self) -> usize {
        self.matrices.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }
}

/// Decomposition configuration: level widths, per-level sparsity budgets,
/// attack proximity weight and clean-loss weight.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchySpec {
    pub widths: Vec<usize>,
    pub sparsity: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl HierarchySpec {
    pub fn new(widths: Vec<usize>, sparsity: Vec<f64>, alpha: f64, beta: f64) -> Self {
        Self { widths, sparsity, alpha, beta }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Checks all invariants against a node count: widths strictly decreasing
    /// below `p` and at least 1, positive sparsity budgets and weights.
    pub fn validate_for(&self, p: usize) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::InvalidSpec("hierarchy has no levels".into()));
        }
        if self.sparsity.len() != self.widths.len() {
            return Err(Error::InvalidSpec(format!(
                "{} sparsity budgets for {} levels",
                self.sparsity.len(),
                self.widths.len()
            )));
        }
        let mut prev = p;
        for (r, &k) in self.widths.iter().enumerate() {
            if k == 0 || k >= prev {
                return Err(Error::InvalidSpec(format!(
                    "widths must satisfy p > k_1 > ... > k_K >= 1, got k_{} = {k} after {prev}",
                    r + 1
                )));
            }
            prev = k;
        }
        for (r, &l) in self.sparsity.iter().enumerate() {
            if !l.is_finite() || l <= 0.0 {
                return Err(Error::InvalidSpec(format!("lambda_{} = {l} must be positive", r + 1)));
            }
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::InvalidSpec(format!("alpha = {} must be positive", self.alpha)));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::InvalidSpec(format!("beta = {} must be positive", self.beta)));
        }
        Ok(())
    }

    /// Shape of the r-th component matrix (r is 1-based).
    pub fn component_shape(&self, p: usize, r: usize) -> (usize, usize) {
        let rows = if r == 1 { p } else { self.widths[r - 2] };
        (rows, self.widths[r - 1])
    }
}

/// Shared components `W_r` plus per-subject diagonal loadings, the fit output.
///
/// `components[0]` is P x k_1; `components[r-1]` is k_{r-1} x k_r for r >= 2.
/// `loadings[i][r-1]` is the length-k_r loading vector of subject i at level r.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub components: Vec<Array2<f64>>,
    pub loadings: Vec<Vec<Array1<f64>>>,
}

impl FactorModel {
    pub fn depth(&self) -> usize {
        self.components.len()
    }

    pub fn node_count(&self) -> usize {
        self.components.first().map(|w| w.nrows()).unwrap_or(0)
    }

    pub fn subject_count(&self) -> usize {
        self.loadings.len()
    }

    /// Component matrix at 1-based level r.
    pub fn component(&self, r: usize) -> &Array2<f64> {
        &self.components[r - 1]
    }

    /// Loading vector of `subject` at 1-based level r.
    pub fn loading(&self, subject: usize, r: usize) -> &Array1<f64> {
        &self.loadings[subject][r - 1]
    }

    /// Cumulative pattern `W_1 .. W_r` at 1-based level r: the P x k_r matrix
    /// whose columns are the level-r components expressed over the nodes.
    pub fn cumulative_component(&self, r: usize) -> Array2<f64> {
        let mut y = self.components[0].clone();
        for w in &self.components[1..r] {
            y = y.dot(w);
        }
        y
    }

    pub fn validate_shapes(&self, p: usize, widths: &[usize]) -> Result<()> {
        if self.components.len() != widths.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} components for {} levels",
                self.components.len(),
                widths.len()
            )));
        }
        let mut rows = p;
        for (idx, w) in self.components.iter().enumerate() {
            if w.nrows() != rows || w.ncols() != widths[idx] {
                return Err(Error::ShapeMismatch(format!(
                    "component {} is {}x{}, expected {}x{}",
                    idx + 1,
                    w.nrows(),
                    w.ncols(),
                    rows,
                    widths[idx]
                )));
            }
            rows = widths[idx];
        }
        for (i, subj) in self.loadings.iter().enumerate() {
            if subj.len() != widths.len() {
                return Err(Error::ShapeMismatch(format!(
                    "subject {i} has {} loading levels, expected {}",
                    subj.len(),
                    widths.len()
                )));
            }
            for (idx, l) in subj.iter().enumerate() {
                if l.len() != widths[idx] {
                    return Err(Error::ShapeMismatch(format!(
                        "loading of subject {i} level {} has length {}, expected {}",
                        idx + 1,
                        l.len(),
                        widths[idx]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Perturbed component matrices maintained by the attack. Shapes mirror the
/// paired [`FactorModel`]; no feasibility constraints are imposed on them.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryModel {
    pub components: Vec<Array2<f64>>,
}

impl AdversaryModel {
    /// Starts the adversary at the current clean components.
    pub fn from_model(model: &FactorModel) -> Self {
        Self { components: model.components.clone() }
    }

    pub fn component(&self, r: usize) -> &Array2<f64> {
        &self.components[r - 1]
    }
}

/// Magnitude of the constant data shift used by the attack: every entry of
/// every matrix moves by `magnitude_factor * sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationConfig {
    pub magnitude_factor: f64,
    pub sigma: f64,
}

impl PerturbationConfig {
    pub fn new(magnitude_factor: f64, sigma: f64) -> Result<Self> {
        if !magnitude_factor.is_finite()
            || magnitude_factor < 0.0
            || !sigma.is_finite()
            || sigma < 0.0
        {
            return Err(Error::InvalidParams(format!(
                "perturbation requires nonnegative factor and sigma, got {magnitude_factor}, {sigma}"
            )));
        }
        Ok(Self { magnitude_factor, sigma })
    }
}

/// Computes the Pearson correlation matrix of every subject in the panel.
///
/// Entry (p, q) of subject i is the correlation of node columns p and q.
/// Output is symmetric with exact unit diagonal; off-diagonal entries are
/// clamped into [-1, 1] against last-ulp rounding.
pub fn pearson_correlation(panel: &TimeSeriesPanel) -> Result<CorrelationSet> {
    let p = panel.node_count();
    let mut matrices = Vec::with_capacity(panel.subject_count());
    for (i, x) in panel.subjects().iter().enumerate() {
        let t = x.nrows();
        // Center each column and keep its norm.
        let mut centered = Array2::<f64>::zeros((t, p));
        let mut norms = vec![0.0f64; p];
        for q in 0..p {
            let mut mean = 0.0;
            for row in 0..t {
                mean += x[[row, q]];
            }
            mean /= t as f64;
            let mut ss = 0.0;
            let mut raw = 0.0;
            for row in 0..t {
                let c = x[[row, q]] - mean;
                centered[[row, q]] = c;
                ss += c * c;
                raw += x[[row, q]] * x[[row, q]];
            }
            // A constant column leaves only rounding residue after centering.
            if ss <= 1e-24 * raw.max(1e-300) {
                return Err(Error::ZeroVarianceNode { subject: i, node: q });
            }
            norms[q] = ss.sqrt();
        }
        let mut m = Array2::<f64>::zeros((p, p));
        for a in 0..p {
            m[[a, a]] = 1.0;
            for b in (a + 1)..p {
                let mut dot = 0.0;
                for row in 0..t {
                    dot += centered[[row, a]] * centered[[row, b]];
                }
                let r = (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0);
                m[[a, b]] = r;
                m[[b, a]] = r;
            }
        }
        matrices.push(m);
    }
    CorrelationSet::new(matrices)
}

/// `Y diag(d) Y^T`, computed on the upper triangle and mirrored so the output
/// is symmetric bit for bit.
pub(crate) fn scaled_gram(y: &Array2<f64>, diag: &Array1<f64>) -> Array2<f64> {
    let p = y.nrows();
    let k = y.ncols();
    let mut r = Array2::<f64>::zeros((p, p));
    for a in 0..p {
        for b in a..p {
            let mut acc = 0.0;
            for l in 0..k {
                acc += y[[a, l]] * diag[l] * y[[b, l]];
            }
            r[[a, b]] = acc;
            r[[b, a]] = acc;
        }
    }
    r
}

/// Cumulative products `Y_0 = I, Y_r = Y_{r-1} W_r`.
pub(crate) fn cumulative_products(p: usize, components: &[Array2<f64>]) -> Vec<Array2<f64>> {
    let mut ys = Vec::with_capacity(components.len() + 1);
    ys.push(Array2::<f64>::eye(p));
    for (idx, w) in components.iter().enumerate() {
        let next = if idx == 0 { w.clone() } else { ys[idx].dot(w) };
        ys.push(next);
    }
    ys
}

/// Model reconstruction of `subject` at 1-based `level`:
/// `(W_1 .. W_r) L_ri (W_1 .. W_r)^T`. Symmetric by construction.
pub fn reconstruct(model: &FactorModel, subject: usize, level: usize) -> Result<Array2<f64>> {
    if level == 0 || level > model.depth() {
        return Err(Error::DimensionMismatch(format!(
            "level {level} outside 1..={}",
            model.depth()
        )));
    }
    if subject >= model.subject_count() {
        return Err(Error::DimensionMismatch(format!(
            "subject {subject} outside 0..{}",
            model.subject_count()
        )));
    }
    let ys = cumulative_products(model.node_count(), &model.components);
    Ok(scaled_gram(&ys[level], model.loading(subject, level)))
}

fn squared_frobenius_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Sum over subjects and levels of the squared Frobenius reconstruction error.
///
/// The `components` argument selects which component set reconstructs (clean
/// or adversarial); loadings always come from the model. Subjects are reduced
/// in ascending order with levels ascending inside, so the result does not
/// depend on the thread count.
pub fn reconstruction_loss(
    components: &[Array2<f64>],
    loadings: &[Vec<Array1<f64>>],
    data: &CorrelationSet,
) -> Result<f64> {
    check_consistent(components, loadings, data)?;
    let ys = cumulative_products(data.node_count(), components);
    let per_subject: Vec<f64> = data
        .matrices()
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let mut acc = 0.0;
            for r in 1..=components.len() {
                let recon = scaled_gram(&ys[r], &loadings[i][r - 1]);
                acc += squared_frobenius_diff(theta, &recon);
            }
            acc
        })
        .collect();
    Ok(per_subject.iter().sum())
}

pub(crate) fn check_consistent(
    components: &[Array2<f64>],
    loadings: &[Vec<Array1<f64>>],
    data: &CorrelationSet,
) -> Result<()> {
    if components.is_empty() {
        return Err(Error::ShapeMismatch("no components".into()));
    }
    if components[0].nrows() != data.node_count() {
        return Err(Error::ShapeMismatch(format!(
            "component rows {} != node count {}",
            components[0].nrows(),
            data.node_count()
        )));
    }
    let mut rows = components[0].nrows();
    for (idx, w) in components.iter().enumerate() {
        if w.nrows() != rows {
            return Err(Error::ShapeMismatch(format!(
                "component {} has {} rows, expected {rows}",
                idx + 1,
                w.nrows()
            )));
        }
        rows = w.ncols();
    }
    if loadings.len() != data.subject_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} loading sets for {} subjects",
            loadings.len(),
            data.subject_count()
        )));
    }
    for (i, subj) in loadings.iter().enumerate() {
        if subj.len() != components.len() {
            return Err(Error::ShapeMismatch(format!(
                "subject {i} has {} loading levels, expected {}",
                subj.len(),
                components.len()
            )));
        }
        for (idx, l) in subj.iter().enumerate() {
            if l.len() != components[idx].ncols() {
                return Err(Error::ShapeMismatch(format!(
                    "loading of subject {i} at level {} has length {}, expected {}",
                    idx + 1,
                    l.len(),
                    components[idx].ncols()
                )));
            }
        }
    }
    Ok(())
}

/// Cached products for gradient evaluation.
///
/// `cumulative[r]` is `Y_r` (with `Y_0 = I`). `inner` holds, for every level
/// pair r <= n and subject i, the symmetric k_r x k_r matrix
/// `T^r_{n,i} = (W_{r+1} .. W_n) L_ni (W_{r+1} .. W_n)^T`.
///
/// The between-level product indexing (factors W_{r+1} through W_n acting on
/// the level-n loading) is the only reading under which the shapes compose
/// and the analytic gradients match finite differences; see the gradient
/// tests in the objective module.
#[derive(Debug, Clone)]
pub struct ProductCache {
    cumulative: Vec<Array2<f64>>,
    inner: Vec<Vec<Vec<Array2<f64>>>>,
}

impl ProductCache {
    /// `Y_r` for r in 0..=K.
    pub fn y(&self, r: usize) -> &Array2<f64> {
        &self.cumulative[r]
    }

    /// `T^r_{n,i}` for 1 <= r <= n <= K.
    pub fn t(&self, r: usize, n: usize, i: usize) -> &Array2<f64> {
        &self.inner[r - 1][n - r][i]
    }

    pub fn depth(&self) -> usize {
        self.cumulative.len() - 1
    }
}

/// Builds every cumulative product and every inner tensor the gradients need.
pub fn build_product_cache(
    components: &[Array2<f64>],
    loadings: &[Vec<Array1<f64>>],
) -> Result<ProductCache> {
    if components.is_empty() {
        return Err(Error::ShapeMismatch("no components".into()));
    }
    let k_depth = components.len();
    let subjects = loadings.len();
    let p = components[0].nrows();
    let cumulative = cumulative_products(p, components);

    let mut inner = Vec::with_capacity(k_depth);
    for r in 1..=k_depth {
        let k_r = components[r - 1].ncols();
        let mut per_n = Vec::with_capacity(k_depth - r + 1);
        // B = W_{r+1} .. W_n, extended one factor at a time.
        let mut between = Array2::<f64>::eye(k_r);
        for n in r..=k_depth {
            if n > r {
                between = between.dot(&components[n - 1]);
            }
            let mut per_subject = Vec::with_capacity(subjects);
            for subj in loadings.iter().take(subjects) {
                let l = &subj[n - 1];
                if l.len() != between.ncols() {
                    return Err(Error::ShapeMismatch(format!(
                        "loading at level {n} has length {}, expected {}",
                        l.len(),
                        between.ncols()
                    )));
                }
                per_subject.push(scaled_gram(&between, l));
            }
            per_n.push(per_subject);
        }
        inner.push(per_n);
    }
    Ok(ProductCache { cumulative, inner })
}
