use thiserror::Error;

pub type Result<T, E = XcbError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum XcbError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("input error: {0}")]
    Input(String),

    /// Misuse of an API contract (e.g. backward from a non-scalar root).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("degenerate loss: every position is ignored")]
    DegenerateLoss,

    /// Inference-time CIF produced no tokens.
    #[error("predictor fired no tokens (weight sum {0})")]
    EmptyFiring(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl XcbError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        XcbError::Dimension(msg.into())
    }
}
