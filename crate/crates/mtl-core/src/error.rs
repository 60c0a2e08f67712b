use thiserror::Error;

/// Crate-wide error type. Numeric kernels return `ShapeMismatch`/`InvalidInput`
/// rather than panicking so the harness and the FFI layer can surface failures
/// as values.
#[derive(Debug, Error)]
pub enum MtlError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-positive loss {value} passed to uw-o weighting")]
    NonPositiveLoss { value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
}

pub type Result<T> = std::result::Result<T, MtlError>;

impl MtlError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        MtlError::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        MtlError::Config(msg.into())
    }

    pub fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        MtlError::ShapeMismatch {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
