//! Episode rollouts, lower-model warm-up and joint training of both levels.

pub mod config;
pub mod episode;
pub mod error;
pub mod trainer;
pub mod warmup;

pub use config::{EvalConfig, JointConfig, OptimConfig, ProblemConfig, TrainConfig, UpperKind, WarmupConfig};
pub use episode::{rollout_episode, solve_instance, Episode, EpisodeOptions, LowerSolver, UpperPolicy};
pub use error::{Result, TrainError};
pub use trainer::{derive_seed, load_models, EpochMetrics, EvalSet, Stage, Trainer};
pub use warmup::{oracle_length, sample_subproblems, OracleSet};
