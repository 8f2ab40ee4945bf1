use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("input shape {shape:?} is too small: {reason}")]
    InputTooSmall { shape: Vec<usize>, reason: String },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown partition boundary `{0}`")]
    UnknownBoundary(String),

    #[error("invalid model graph: {0}")]
    InvalidGraph(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("inversion diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("trust boundary violation: {0}")]
    LedgerViolation(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
