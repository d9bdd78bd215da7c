use thiserror::Error;

/// Errors raised by the segmentation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular system: symbol denominator {value} at frequency ({kx}, {ky})")]
    SingularSystem { kx: usize, ky: usize, value: f64 },

    #[error("{0} fidelity cannot be minimized; only Gaussian fidelity has a solver")]
    UnsupportedFidelity(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {stage} at iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },
}

pub type Result<T> = std::result::Result<T, SegError>;
