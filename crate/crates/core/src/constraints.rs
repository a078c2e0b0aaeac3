//! Projection operators enforcing the feasible set after each gradient step.
//!
//! Component columns live in the intersection of an L1 ball of radius
//! `lambda_r` and the unit Linf ball; levels above the first are also
//! nonnegative; loadings are probability vectors.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Diagnostics from projecting the columns of a component matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProjectionReport {
    pub columns_modified: usize,
    pub max_l1_violation_before: f64,
    pub max_linf_violation_before: f64,
}

/// Euclidean projection of a vector onto `{x : ||x||_1 <= lambda, ||x||_inf <= 1}`.
///
/// The projection has the closed form `x -> sign(x) * min(max(|x| - theta, 0), 1)`
/// where `theta = 0` if clipping alone is feasible, and otherwise is the L1
/// multiplier found here by bisection until the L1 norm meets `lambda` within
/// 1e-10. The returned point always satisfies both bounds, so re-projection
/// returns it unchanged.
pub fn project_l1_linf(x: &Array1<f64>, lambda: f64) -> Result<Array1<f64>> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidParams(format!("lambda = {lambda} must be positive")));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteInput("projection input".into()));
    }
    let shrunk_l1 = |theta: f64| -> f64 {
        x.iter()
            .map(|v| (v.abs() - theta).clamp(0.0, 1.0))
            .sum()
    };
    let clipped_l1 = shrunk_l1(0.0);
    if clipped_l1 <= lambda {
        // Clipping suffices; untouched entries stay bitwise identical.
        return Ok(x.mapv(|v| v.clamp(-1.0, 1.0)));
    }
    let mut lo = 0.0f64;
    let mut hi = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for _ in 0..200 {
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if shrunk_l1(mid) > lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Take theta from the feasible side of the bracket: the output L1 norm is
    // <= lambda exactly as summed, which makes the projection idempotent.
    let theta = hi;
    Ok(x.mapv(|v| v.signum() * (v.abs() - theta).clamp(0.0, 1.0)))
}

/// Elementwise `max(., 0)`.
pub fn project_nonneg(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|v| v.max(0.0))
}

/// Clamps negatives to zero and rescales so the entries sum to one.
pub fn project_loading(v: &Array1<f64>) -> Result<Array1<f64>> {
    let clamped = v.mapv(|x| x.max(0.0));
    let sum: f64 = clamped.iter().sum();
    if !sum.is_finite() || sum <= 0.0 {
        return Err(Error::DegenerateLoading);
    }
    Ok(clamped.mapv(|x| x / sum))
}

/// Projects every column of a component matrix onto the L1/Linf intersection,
/// optionally clamping negatives afterwards (levels r >= 2).
pub fn project_component(
    w: &Array2<f64>,
    lambda: f64,
    nonneg: bool,
) -> Result<(Array2<f64>, ProjectionReport)> {
    let mut out = w.clone();
    let mut report = ProjectionReport::default();
    for c in 0..w.ncols() {
        let col = w.column(c).to_owned();
        let l1: f64 = col.iter().map(|v| v.abs()).sum();
        let linf = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        report.max_l1_violation_before = report.max_l1_violation_before.max((l1 - lambda).max(0.0));
        report.max_linf_violation_before =
            report.max_linf_violation_before.max((linf - 1.0).max(0.0));
        let mut projected = project_l1_linf(&col, lambda)?;
        if nonneg {
            projected.mapv_inplace(|v| v.max(0.0));
        }
        if projected.iter().zip(col.iter()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            report.columns_modified += 1;
        }
        out.column_mut(c).assign(&projected);
    }
    Ok((out, report))
}
