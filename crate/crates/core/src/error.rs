use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input document; `path` locates the offending value.
    #[error("format error at {path}: {message}")]
    Format { path: String, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("alignment error: {logs} log entries but {labels} label entries")]
    Alignment { logs: usize, labels: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
