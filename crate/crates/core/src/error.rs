use thiserror::Error;

/// Errors raised across the simulator, inference and tuning layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for group of order {order}")]
    OutOfRange { index: usize, order: usize },

    #[error("inference failure: {0}")]
    Inference(String),

    #[error("step too large for variance bound: L*delta = {scaled_step} >= sqrt(var) = {std}; shrink the step or re-measure")]
    StepTooLarge { scaled_step: f64, std: f64 },

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown figure `{0}`")]
    UnknownFigure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
