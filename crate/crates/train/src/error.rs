use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Core(#[from] htsp_core::Error),
    #[error(transparent)]
    Policy(#[from] htsp_policy::PolicyError),
    #[error(transparent)]
    Checkpoint(#[from] htsp_autograd::CheckpointError),
    #[error("checkpoint metadata: {0}")]
    Meta(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;
