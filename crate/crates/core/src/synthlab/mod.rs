//! Synthetic data generation and evaluation metrics: planted ground truth, a
//! linear latent-factor time-series generator, matched-accuracy scoring,
//! split-sample reproducibility, and the sparsity grid search.

pub mod assignment;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CorrelationSet, FactorModel, HierarchySpec, PerturbationConfig, TimeSeriesPanel};
use crate::trainer::{fit_adv_hscp, fit_hscp, pooled_sigma, FitConfig};
use assignment::max_weight_assignment;

/// Planted components and loadings that generated a synthetic dataset.
///
/// `components[0]` is the P x k_1 signed sparse component matrix; deeper
/// entries are nonnegative sparse mixing matrices k_{r-1} x k_r. The level-r
/// node-space pattern is the cumulative product of the first r entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub components: Vec<Array2<f64>>,
    pub loadings: Vec<Vec<Array1<f64>>>,
    pub seed: u64,
}

impl GroundTruth {
    pub fn node_count(&self) -> usize {
        self.components[0].nrows()
    }

    pub fn subject_count(&self) -> usize {
        self.loadings.len()
    }

    pub fn depth(&self) -> usize {
        self.components.len()
    }

    /// Node-space pattern at 1-based level r.
    pub fn pattern(&self, r: usize) -> Array2<f64> {
        let mut y = self.components[0].clone();
        for m in &self.components[1..r] {
            y = y.dot(m);
        }
        y
    }
}

/// Best column pairing between an estimated and a reference component matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// (estimated column, reference column) pairs, sorted by estimated column.
    pub assignment: Vec<(usize, usize)>,
    pub per_component_similarity: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Which trainer a benchmark runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Hscp,
    AdvHscp,
}

/// Options for the reproducibility and grid-search procedures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSampleOptions {
    pub n_runs: usize,
    pub seed: u64,
    /// Perturbation magnitude used when the method is adversarial.
    pub perturb_factor: f64,
}

impl Default for SplitSampleOptions {
    fn default() -> Self {
        Self { n_runs: 20, seed: 0, perturb_factor: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelReproducibility {
    pub level: usize,
    pub mean: f64,
    pub std: f64,
    pub per_run: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub lambda: f64,
    pub level: usize,
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    /// Chosen sparsity per 1-based level (ties broken toward smaller lambda).
    pub chosen: Vec<(usize, f64)>,
    pub cells: Vec<GridCell>,
    /// Candidates whose fits failed, with the error text; not fatal.
    pub failures: Vec<(f64, String)>,
}

fn validate_widths(p: usize, widths: &[usize]) -> Result<()> {
    if widths.is_empty() {
        return Err(Error::InvalidSpec("no level widths".into()));
    }
    let mut prev = p;
    for &k in widths {
        if k == 0 || k >= prev {
            return Err(Error::InvalidSpec(format!(
                "widths must satisfy p > k_1 > ... >= 1, got {widths:?} for p = {p}"
            )));
        }
        prev = k;
    }
    Ok(())
}

/// Draws a symmetric Dirichlet(1) probability vector.
fn dirichlet_flat(rng: &mut impl Rng, k: usize) -> Array1<f64> {
    let draws: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 {
        Array1::from_iter(draws.into_iter().map(|v| v / sum))
    } else {
        Array1::from_elem(k, 1.0 / k as f64)
    }
}

/// Random support of `nonzeros` indices out of `n` (partial Fisher-Yates).
fn random_support(rng: &mut impl Rng, n: usize, nonzeros: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..nonzeros {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(nonzeros);
    idx.sort_unstable();
    idx
}

/// Generates planted components and per-subject loadings.
///
/// Level-1 columns have `round(sparsity_fraction * p)` zeros, signed nonzero
/// entries, and unit max magnitude. Deeper mixing matrices are nonnegative
/// and sparse with at least one nonzero per column. Loadings are symmetric
/// Dirichlet draws, one probability vector per subject per level.
pub fn generate_ground_truth(
    node_count: usize,
    widths: &[usize],
    sparsity_fraction: f64,
    subject_count: usize,
    seed: u64,
) -> Result<GroundTruth> {
    validate_widths(node_count, widths)?;
    if !(0.0..1.0).contains(&sparsity_fraction) {
        return Err(Error::InvalidSpec(format!(
            "sparsity_fraction = {sparsity_fraction} must be in [0, 1)"
        )));
    }
    if subject_count == 0 {
        return Err(Error::InvalidSpec("subject_count must be >= 1".into()));
    }
    let zeros_first = (sparsity_fraction * node_count as f64).round() as usize;
    if zeros_first >= node_count {
        return Err(Error::InvalidSpec("every level-1 column would be empty".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut components = Vec::with_capacity(widths.len());

    // Level 1: signed sparse columns over the nodes.
    let k1 = widths[0];
    let nonzeros = node_count - zeros_first;
    let mut w1 = Array2::<f64>::zeros((node_count, k1));
    for c in 0..k1 {
        let support = random_support(&mut rng, node_count, nonzeros);
        let mut max_abs = 0.0f64;
        let values: Vec<f64> = support.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        for v in &values {
            max_abs = max_abs.max(v.abs());
        }
        for (pos, &row) in support.iter().enumerate() {
            w1[[row, c]] = if max_abs > 1e-9 { values[pos] / max_abs } else { 1.0 };
        }
    }
    components.push(w1);

    // Deeper levels: nonnegative sparse mixing matrices.
    for r in 1..widths.len() {
        let rows = widths[r - 1];
        let cols = widths[r];
        let zeros = ((sparsity_fraction * rows as f64).floor() as usize).min(rows - 1);
        let nz = rows - zeros;
        let mut m = Array2::<f64>::zeros((rows, cols));
        for c in 0..cols {
            let support = random_support(&mut rng, rows, nz);
            let values: Vec<f64> = support.iter().map(|_| rng.random::<f64>()).collect();
            let max_abs = values.iter().fold(0.0f64, |a, v| a.max(*v));
            for (pos, &row) in support.iter().enumerate() {
                m[[row, c]] = if max_abs > 1e-9 { values[pos] / max_abs } else { 1.0 };
            }
        }
        components.push(m);
    }

    let loadings = (0..subject_count)
        .map(|_| widths.iter().map(|&k| dirichlet_flat(&mut rng, k)).collect())
        .collect();
    Ok(GroundTruth { components, loadings, seed })
}

/// Synthesizes a time-series panel whose per-subject correlation structure
/// follows the planted level-1 pattern: each row is
/// `W_1 diag(loading)^(1/2) z + gaussian_sigma * eps + (pois - poisson_mean)`
/// with `z`, `eps` standard normal. The Poisson noise is mean-centered so it
/// stresses the correlation structure without a deterministic offset.
pub fn synthesize_panel(
    truth: &GroundTruth,
    time_points: usize,
    gaussian_sigma: f64,
    poisson_mean: f64,
    seed: u64,
) -> Result<TimeSeriesPanel> {
    if time_points < 2 {
        return Err(Error::InvalidParams(format!(
            "time_points = {time_points} must be >= 2"
        )));
    }
    if !gaussian_sigma.is_finite()
        || gaussian_sigma < 0.0
        || !poisson_mean.is_finite()
        || poisson_mean < 0.0
    {
        return Err(Error::InvalidParams(
            "gaussian_sigma and poisson_mean must be nonnegative".into(),
        ));
    }
    let p = truth.node_count();
    let k1 = truth.components[0].ncols();
    let poisson = if poisson_mean > 0.0 {
        Some(Poisson::new(poisson_mean).map_err(|e| Error::InvalidParams(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut subjects = Vec::with_capacity(truth.subject_count());
    for loadings in &truth.loadings {
        let lambda = &loadings[0];
        // Mixing matrix B = W_1 diag(sqrt(lambda)).
        let mut b = truth.components[0].clone();
        for (c, l) in lambda.iter().enumerate() {
            let s = l.sqrt();
            b.column_mut(c).mapv_inplace(|v| v * s);
        }
        let mut x = Array2::<f64>::zeros((time_points, p));
        let mut z = Array1::<f64>::zeros(k1);
        for t in 0..time_points {
            for l in 0..k1 {
                z[l] = rng.sample(StandardNormal);
            }
            for node in 0..p {
                let mut v = 0.0;
                for l in 0..k1 {
                    v += b[[node, l]] * z[l];
                }
                let eps: f64 = rng.sample(StandardNormal);
                v += gaussian_sigma * eps;
                if let Some(pois) = &poisson {
                    let draw: f64 = rng.sample(*pois);
                    v += draw - poisson_mean;
                }
                x[[t, node]] = v;
            }
        }
        subjects.push(x);
    }
    TimeSeriesPanel::new(subjects)
}

/// Mean absolute-cosine similarity between the columns of two matrices under
/// the best one-to-one assignment. Sign flips and column order do not matter.
pub fn match_accuracy(estimated: &Array2<f64>, truth: &Array2<f64>) -> Result<MatchResult> {
    if estimated.nrows() != truth.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "row counts differ: {} vs {}",
            estimated.nrows(),
            truth.nrows()
        )));
    }
    let norms = |m: &Array2<f64>| -> Result<Vec<f64>> {
        m.columns()
            .into_iter()
            .enumerate()
            .map(|(c, col)| {
                let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    Ok(n)
                } else {
                    Err(Error::ZeroColumn(c))
                }
            })
            .collect()
    };
    let est_norms = norms(estimated)?;
    let truth_norms = norms(truth)?;
    let sims = Array2::from_shape_fn((estimated.ncols(), truth.ncols()), |(i, j)| {
        let dot: f64 = estimated
            .column(i)
            .iter()
            .zip(truth.column(j).iter())
            .map(|(a, b)| a * b)
            .sum();
        (dot.abs() / (est_norms[i] * truth_norms[j])).min(1.0)
    });
    let assignment = max_weight_assignment(&sims);
    let per_component_similarity: Vec<f64> =
        assignment.iter().map(|&(i, j)| sims[[i, j]]).collect();
    let mean_accuracy =
        per_component_similarity.iter().sum::<f64>() / per_component_similarity.len().max(1) as f64;
    Ok(MatchResult { assignment, per_component_similarity, mean_accuracy })
}

fn subset(data: &CorrelationSet, indices: &[usize]) -> CorrelationSet {
    let mats = indices.iter().map(|&i| data.matrices()[i].clone()).collect();
    CorrelationSet::from_matrices_unchecked(mats).expect("subset of valid set")
}

fn fit_by_method(
    data: &CorrelationSet,
    spec: &HierarchySpec,
    config: &FitConfig,
    method: FitMethod,
    perturb_factor: f64,
) -> Result<FactorModel> {
    match method {
        FitMethod::Hscp => fit_hscp(data, spec, config).map(|(m, _)| m),
        FitMethod::AdvHscp => {
            let perturb = PerturbationConfig::new(perturb_factor, pooled_sigma(data))?;
            fit_adv_hscp(data, spec, config, &perturb).map(|(m, _, _)| m)
        }
    }
}

/// Fits both halves and scores the per-level similarity between their
/// cumulative patterns. Exposed so the degenerate identical-halves case can
/// be exercised directly.
pub fn reproducibility_between(
    half_a: &CorrelationSet,
    half_b: &CorrelationSet,
    spec: &HierarchySpec,
    config: &FitConfig,
    method: FitMethod,
    perturb_factor: f64,
) -> Result<Vec<f64>> {
    let model_a = fit_by_method(half_a, spec, config, method, perturb_factor)?;
    let model_b = fit_by_method(half_b, spec, config, method, perturb_factor)?;
    (1..=spec.depth())
        .map(|r| {
            let pattern_a = model_a.cumulative_component(r);
            let pattern_b = model_b.cumulative_component(r);
            match_accuracy(&pattern_a, &pattern_b).map(|m| m.mean_accuracy)
        })
        .collect()
}

fn derived_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(run as u64 + 1))
}

/// Split-sample reproducibility: shuffle subjects, fit each half, and score
/// the per-level similarity of the cumulative patterns; repeated `n_runs`
/// times. Runs execute in parallel but are reduced in run order.
pub fn split_sample_reproducibility(
    data: &CorrelationSet,
    spec: &HierarchySpec,
    fit_config: &FitConfig,
    method: FitMethod,
    opts: &SplitSampleOptions,
) -> Result<Vec<LevelReproducibility>> {
    let s = data.subject_count();
    if s < 2 {
        return Err(Error::InsufficientSubjects { required: 2, actual: s });
    }
    if opts.n_runs == 0 {
        return Err(Error::InvalidParams("n_runs must be >= 1".into()));
    }
    spec.validate_for(data.node_count())?;

    let per_run: Vec<Vec<f64>> = (0..opts.n_runs)
        .into_par_iter()
        .map(|run| {
            let run_seed = derived_seed(opts.seed, run);
            let mut rng = ChaCha20Rng::seed_from_u64(run_seed);
            let mut indices: Vec<usize> = (0..s).collect();
            indices.shuffle(&mut rng);
            let half = s / 2;
            let data_a = subset(data, &indices[..half]);
            let data_b = subset(data, &indices[half..]);
            let config = FitConfig { seed: run_seed, ..*fit_config };
            reproducibility_between(&data_a, &data_b, spec, &config, method, opts.perturb_factor)
        })
        .collect::<Result<Vec<_>>>()?;

    let depth = spec.depth();
    let mut out = Vec::with_capacity(depth);
    for level in 1..=depth {
        let values: Vec<f64> = per_run.iter().map(|run| run[level - 1]).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (values.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        out.push(LevelReproducibility { level, mean, std, per_run: values });
    }
    Ok(out)
}

/// The candidate sparsity values `p * 10^e` for each grid exponent.
pub fn lambda_candidates(node_count: usize, exponents: &[f64]) -> Vec<f64> {
    exponents.iter().map(|e| node_count as f64 * 10f64.powf(*e)).collect()
}

/// Evaluates split-sample reproducibility for every candidate sparsity and
/// picks, per level, the value with the highest mean (ties toward smaller
/// lambda). Failed candidates are recorded, not fatal.
pub fn grid_search_lambda(
    data: &CorrelationSet,
    spec_template: &HierarchySpec,
    exponents: &[f64],
    fit_config: &FitConfig,
    method: FitMethod,
    opts: &SplitSampleOptions,
) -> Result<GridSearchResult> {
    if exponents.is_empty() {
        return Err(Error::InvalidParams("empty exponent grid".into()));
    }
    let candidates = lambda_candidates(data.node_count(), exponents);
    let evaluated: Vec<(f64, Result<Vec<LevelReproducibility>>)> = candidates
        .par_iter()
        .map(|&lambda| {
            let spec = HierarchySpec {
                sparsity: vec![lambda; spec_template.depth()],
                ..spec_template.clone()
            };
            (lambda, split_sample_reproducibility(data, &spec, fit_config, method, opts))
        })
        .collect();

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for (lambda, outcome) in evaluated {
        match outcome {
            Ok(levels) => {
                for l in levels {
                    cells.push(GridCell {
                        lambda,
                        level: l.level,
                        mean: l.mean,
                        std: l.std,
                        n_runs: opts.n_runs,
                    });
                }
            }
            Err(e) => failures.push((lambda, e.to_string())),
        }
    }
    if cells.is_empty() {
        return Err(Error::InvalidParams("every grid candidate failed".into()));
    }

    let mut chosen = Vec::new();
    for level in 1..=spec_template.depth() {
        let mut level_cells: Vec<&GridCell> =
            cells.iter().filter(|c| c.level == level).collect();
        level_cells.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
        let mut best: Option<&GridCell> = None;
        for cell in level_cells {
            if best.is_none_or(|b| cell.mean > b.mean) {
                best = Some(cell);
            }
        }
        if let Some(b) = best {
            chosen.push((level, b.lambda));
        }
    }
    Ok(GridSearchResult { chosen, cells, failures })
}
