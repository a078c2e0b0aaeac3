//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node} of subject {subject} has zero variance")]
    ZeroVarianceNode { subject: usize, node: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("loading vector has no positive mass after clamping negatives")]
    DegenerateLoading,

    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),

    #[error("objective diverged: {0}")]
    NonFiniteLoss(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("column {0} has zero norm")]
    ZeroColumn(usize),

    #[error("need at least {required} subjects, got {actual}")]
    InsufficientSubjects { required: usize, actual: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
