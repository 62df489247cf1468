use thiserror::Error;

pub type Result<T> = std::result::Result<T, SeftError>;

#[derive(Debug, Error)]
pub enum SeftError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("index {index} out of range for {what} of size {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    /// Loss or activations went non-finite; `layer` is the first block whose output was bad
    /// (`None` when the loss itself is the first non-finite quantity).
    #[error("divergence detected (layer {layer:?}): {detail}")]
    Divergence {
        layer: Option<usize>,
        detail: String,
    },

    #[error(transparent)]
    Trace(#[from] crate::traceio::TraceError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SeftError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        SeftError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SeftError::InvalidArgument(msg.into())
    }
}
