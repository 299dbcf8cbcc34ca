use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Core(#[from] htsp_core::Error),
}

pub type Result<T> = std::result::Result<T, PolicyError>;
