use thiserror::Error;

/// Errors shared by the core modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("structural mismatch: {0}")]
    Mismatch(String),
    #[error("axis {axis} out of range for dimension {d}")]
    Axis { axis: usize, d: usize },
    #[error("derivative order {order} exceeds the maximum {max}")]
    Order { order: usize, max: usize },
    #[error("field is not zero-sum (sum = {0:e})")]
    NotZeroSum(f64),
    #[error("vector field is not a gradient (relative residual {residual:e})")]
    NotGradient { residual: f64 },
    #[error("dense operator limit exceeded: {sites} sites > {cap}")]
    SizeCap { sites: usize, cap: usize },
    #[error("Gaussian integral diverges: largest eigenvalue of CA is {0}")]
    Divergent(f64),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
