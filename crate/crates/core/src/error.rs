use thiserror::Error;

/// Errors raised by the core data model and the algorithms built on it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("no node satisfies the query: {0}")]
    EmptyDomain(&'static str),
    #[error("instance too large for exact solver: {n} nodes (limit {limit})")]
    TooLarge { n: usize, limit: usize },
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("malformed input at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("external solver failed: {0}")]
    External(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
