//! Factorization of sets of subject-level correlation matrices into shared
//! hierarchical sparse components and subject-specific diagonal loadings.
//!
//! The decomposition approximates every subject matrix at every level of a
//! hierarchy, `Theta_i ~ (W_1 .. W_r) L_ri (W_1 .. W_r)^T`, where the `W_r`
//! are shared sparse components and `L_ri` are nonnegative trace-one diagonal
//! loadings. Two trainers are provided: a plain alternating projected descent
//! ([`trainer::fit_hscp`]) and an adversarial variant ([`trainer::fit_adv_hscp`])
//! that alternates an attack on perturbed data with a defense on the clean data.
//!
//! Modules:
//! - [`model`]: domain types, reconstruction, and the reconstruction loss.
//! - [`constraints`]: projection operators for the feasible set.
//! - [`objective`]: bilevel losses, analytic gradients, finite-difference oracle.
//! - [`optimizer`]: AMSgrad adaptive gradient descent.
//! - [`trainer`]: the two fitting loops, data perturbation, stopping rule.
//! - [`synthlab`]: synthetic data generation and evaluation metrics.

pub mod constraints;
pub mod error;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod synthlab;
pub mod trainer;

pub use error::{Error, Result};
