//! Bilevel losses and their analytic gradients, plus the finite-difference
//! oracle used to verify every closed form.
//!
//! The defense objective is `J = H(adv, loadings, data) + beta * H(clean,
//! loadings, data)`; the attack objective for level r is
//! `alpha * ||Wt_r - W_r||_F^2 + H(adv, loadings, perturbed)`. Only the clean
//! reconstruction term depends on `W_r` while the adversary is held fixed, so
//! the defense component gradient carries the factor `beta`, and the loading
//! gradient weights the adversarial and clean terms (1, beta). Both choices
//! are pinned against central finite differences in the tests.

use ndarray::{Array, Array1, Array2, Dimension};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    build_product_cache, check_consistent, cumulative_products, reconstruction_loss,
    AdversaryModel, CorrelationSet, FactorModel,
};

/// The pieces of the defense objective and the attack diagnostics recorded in
/// training traces.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    /// `alpha * sum_r ||Wt_r - W_r||_F^2`.
    pub attack_proximity: f64,
    /// Reconstruction loss of the adversary on the perturbed data.
    pub attack_fit: f64,
    /// Reconstruction loss of the adversary on the clean data.
    pub defense_perturbed: f64,
    /// `beta` times the reconstruction loss of the clean components.
    pub defense_clean: f64,
    /// `defense_perturbed + defense_clean`.
    pub total_j: f64,
}

fn check_paired_shapes(adversary: &AdversaryModel, model: &FactorModel) -> Result<()> {
    if adversary.components.len() != model.components.len() {
        return Err(Error::ShapeMismatch(format!(
            "adversary depth {} vs model depth {}",
            adversary.components.len(),
            model.components.len()
        )));
    }
    for (r, (wt, w)) in adversary.components.iter().zip(model.components.iter()).enumerate() {
        if wt.raw_dim() != w.raw_dim() {
            return Err(Error::ShapeMismatch(format!(
                "adversary component {} is {:?}, model is {:?}",
                r + 1,
                wt.shape(),
                w.shape()
            )));
        }
    }
    Ok(())
}

fn frobenius_sq_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Attack objective at level r: proximity to the clean component plus the
/// adversary's reconstruction loss on the perturbed data.
pub fn attack_objective(
    adversary: &AdversaryModel,
    model: &FactorModel,
    perturbed_data: &CorrelationSet,
    r: usize,
    alpha: f64,
) -> Result<f64> {
    check_paired_shapes(adversary, model)?;
    check_level(r, model.components.len())?;
    let proximity = frobenius_sq_diff(adversary.component(r), model.component(r));
    let fit = reconstruction_loss(&adversary.components, &model.loadings, perturbed_data)?;
    Ok(alpha * proximity + fit)
}

/// Defense objective: adversarial and clean reconstruction of the clean data,
/// with the clean term weighted by `beta`.
pub fn defense_objective(
    adversary: &AdversaryModel,
    model: &FactorModel,
    data: &CorrelationSet,
    beta: f64,
) -> Result<LossBreakdown> {
    check_paired_shapes(adversary, model)?;
    let defense_perturbed = reconstruction_loss(&adversary.components, &model.loadings, data)?;
    let defense_clean = beta * reconstruction_loss(&model.components, &model.loadings, data)?;
    Ok(LossBreakdown {
        attack_proximity: 0.0,
        attack_fit: 0.0,
        defense_perturbed,
        defense_clean,
        total_j: defense_perturbed + defense_clean,
    })
}

fn check_level(r: usize, depth: usize) -> Result<()> {
    if r == 0 || r > depth {
        return Err(Error::ShapeMismatch(format!("level {r} outside 1..={depth}")));
    }
    Ok(())
}

/// Gradient of `sum_i sum_{n>=r} ||D_i - Y_{r-1} W_r T^r_{n,i} W_r^T Y_{r-1}^T||_F^2`
/// with respect to `W_r`, for whichever component set produced the cache.
///
/// Per (subject, level-n) term:
///   -4 A^T D_i A W T  +  4 A^T A W T W^T A^T A W T,   A = Y_{r-1}.
/// Subjects are reduced in ascending order (levels ascending inside each).
pub(crate) fn grad_reconstruction_wrt_component(
    components: &[Array2<f64>],
    loadings: &[Vec<Array1<f64>>],
    data: &CorrelationSet,
    r: usize,
) -> Result<Array2<f64>> {
    check_consistent(components, loadings, data)?;
    let depth = components.len();
    check_level(r, depth)?;
    let cache = build_product_cache(components, loadings)?;
    let a = cache.y(r - 1);
    let w = &components[r - 1];
    // A = I at the first level; skip the degenerate P x P products.
    let gram = (r > 1).then(|| a.t().dot(a));

    let per_subject: Vec<Array2<f64>> = data
        .matrices()
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let projected;
            let m_i: &Array2<f64> = if r == 1 {
                theta
            } else {
                projected = a.t().dot(theta).dot(a);
                &projected
            };
            let mut g = Array2::<f64>::zeros(w.raw_dim());
            for n in r..=depth {
                let t = cache.t(r, n, i);
                let u = w.dot(t);
                let nu = match &gram {
                    Some(gm) => gm.dot(&u),
                    None => u.clone(),
                };
                let quart = nu.dot(&w.t().dot(&nu));
                g.zip_mut_with(&m_i.dot(&u), |acc, &v| *acc -= 4.0 * v);
                g.zip_mut_with(&quart, |acc, &v| *acc += 4.0 * v);
            }
            g
        })
        .collect();

    let mut total = Array2::<f64>::zeros(w.raw_dim());
    for g in per_subject {
        total += &g;
    }
    Ok(total)
}

/// Diagonal gradient of one subject/level reconstruction term with respect to
/// the loading vector: `diag(-2 Y^T D Y + 2 Y^T Y L Y^T Y)`.
pub(crate) fn grad_reconstruction_wrt_loading(
    components: &[Array2<f64>],
    loadings: &[Vec<Array1<f64>>],
    data: &CorrelationSet,
    r: usize,
    subject: usize,
) -> Result<Array1<f64>> {
    check_consistent(components, loadings, data)?;
    let depth = components.len();
    check_level(r, depth)?;
    if subject >= data.subject_count() {
        return Err(Error::ShapeMismatch(format!(
            "subject {subject} outside 0..{}",
            data.subject_count()
        )));
    }
    let ys = cumulative_products(data.node_count(), components);
    let y = &ys[r];
    let theta = &data.matrices()[subject];
    let lambda = &loadings[subject][r - 1];
    let g1 = y.t().dot(theta).dot(y);
    let g2 = y.t().dot(y);
    let k = y.ncols();
    let mut grad = Array1::<f64>::zeros(k);
    for l in 0..k {
        let mut quad = 0.0;
        for j in 0..k {
            quad += g2[[l, j]] * lambda[j] * g2[[j, l]];
        }
        grad[l] = -2.0 * g1[[l, l]] + 2.0 * quad;
    }
    Ok(grad)
}

/// Analytic gradient of the attack objective with respect to the adversarial
/// component at level r.
pub fn grad_attack_wrt_adversary(
    adversary: &AdversaryModel,
    model: &FactorModel,
    perturbed_data: &CorrelationSet,
    r: usize,
    alpha: f64,
) -> Result<Array2<f64>> {
    check_paired_shapes(adversary, model)?;
    let mut grad = grad_reconstruction_wrt_component(
        &adversary.components,
        &model.loadings,
        perturbed_data,
        r,
    )?;
    grad.zip_mut_with(adversary.component(r), |g, &wt| *g += 2.0 * alpha * wt);
    grad.zip_mut_with(model.component(r), |g, &w| *g -= 2.0 * alpha * w);
    Ok(grad)
}

/// Analytic gradient of the defense objective with respect to the loading of
/// `subject` at level r: the adversarial term plus `beta` times the clean one.
pub fn grad_j_wrt_loading(
    adversary: &AdversaryModel,
    model: &FactorModel,
    data: &CorrelationSet,
    r: usize,
    subject: usize,
    beta: f64,
) -> Result<Array1<f64>> {
    check_paired_shapes(adversary, model)?;
    let adv = grad_reconstruction_wrt_loading(&adversary.components, &model.loadings, data, r, subject)?;
    let clean =
        grad_reconstruction_wrt_loading(&model.components, &model.loadings, data, r, subject)?;
    Ok(&adv + &(beta * &clean))
}

/// Analytic gradient of the defense objective with respect to the clean
/// component at level r. With the adversary held fixed only the clean
/// reconstruction term depends on it, hence the plain `beta` scaling.
pub fn grad_j_wrt_component(
    model: &FactorModel,
    data: &CorrelationSet,
    r: usize,
    beta: f64,
) -> Result<Array2<f64>> {
    let grad = grad_reconstruction_wrt_component(&model.components, &model.loadings, data, r)?;
    Ok(beta * &grad)
}

/// Central-difference gradient estimate, one coordinate at a time.
pub fn finite_difference_gradient<D: Dimension>(
    mut loss: impl FnMut(&Array<f64, D>) -> Result<f64>,
    x: &Array<f64, D>,
    step: f64,
) -> Result<Array<f64, D>> {
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidParams(format!("step = {step} must be positive")));
    }
    let mut work = x.to_owned();
    let mut grad = Array::<f64, D>::zeros(x.raw_dim());
    let len = work.len();
    for j in 0..len {
        let orig = work.as_slice_mut().expect("standard layout")[j];
        work.as_slice_mut().unwrap()[j] = orig + step;
        let up = loss(&work)?;
        work.as_slice_mut().unwrap()[j] = orig - step;
        let down = loss(&work)?;
        work.as_slice_mut().unwrap()[j] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "loss not finite near coordinate {j}"
            )));
        }
        grad.as_slice_mut().unwrap()[j] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// Relative difference between an analytic gradient and its finite-difference
/// estimate, with a small-norm floor.
pub fn gradient_relative_error<D: Dimension>(
    analytic: &Array<f64, D>,
    numeric: &Array<f64, D>,
) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}
