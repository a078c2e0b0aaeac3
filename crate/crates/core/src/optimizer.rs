//! AMSgrad adaptive gradient descent.
//!
//! The update keeps a running elementwise maximum of the second-moment
//! average, so effective per-coordinate step sizes never grow. The first
//! moment is bias-corrected; the second is not — `v_hat` tracks the raw `v`.
//! That asymmetry is deliberate and is pinned by a unit test.

use ndarray::{Array, Dimension};

use crate::error::{Error, Result};

/// Step-size and decay constants, shared by every parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmsGradConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AmsGradConfig {
    fn default() -> Self {
        Self { eta: 0.1, beta1: 0.9, beta2: 0.99, epsilon: 1e-8 }
    }
}

/// Moment accumulators for one parameter tensor. Each tensor being optimized
/// (every component matrix, every adversarial matrix, every loading vector)
/// owns exactly one state so moment statistics never mix.
#[derive(Debug, Clone)]
pub struct OptimizerState<D: Dimension> {
    config: AmsGradConfig,
    m: Array<f64, D>,
    v: Array<f64, D>,
    v_hat: Array<f64, D>,
    step_count: u64,
    beta1_pow: f64,
}

impl<D: Dimension> OptimizerState<D> {
    pub fn new(config: AmsGradConfig, shape: D) -> Self {
        Self {
            config,
            m: Array::zeros(shape.clone()),
            v: Array::zeros(shape.clone()),
            v_hat: Array::zeros(shape),
            step_count: 0,
            beta1_pow: 1.0,
        }
    }

    /// State shaped like an existing parameter tensor.
    pub fn for_parameter(config: AmsGradConfig, param: &Array<f64, D>) -> Self {
        Self::new(config, param.raw_dim())
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn v_hat(&self) -> &Array<f64, D> {
        &self.v_hat
    }

    /// Applies one AMSgrad update to `param` in place.
    pub fn step(&mut self, param: &mut Array<f64, D>, gradient: &Array<f64, D>) -> Result<()> {
        if gradient.raw_dim() != self.m.raw_dim() || param.raw_dim() != self.m.raw_dim() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer state {:?} vs param {:?} vs gradient {:?}",
                self.m.shape(),
                param.shape(),
                gradient.shape()
            )));
        }
        if !gradient.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFiniteGradient(format!(
                "tensor of shape {:?}",
                gradient.shape()
            )));
        }
        let c = self.config;
        self.step_count += 1;
        self.beta1_pow *= c.beta1;
        let bias = 1.0 - self.beta1_pow;
        ndarray::Zip::from(param)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(&mut self.v_hat)
            .and(gradient)
            .for_each(|w, m, v, v_hat, &g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bias;
                *v_hat = v_hat.max(*v);
                *w -= c.eta * m_hat / (v_hat.sqrt() + c.epsilon);
            });
        Ok(())
    }
}
