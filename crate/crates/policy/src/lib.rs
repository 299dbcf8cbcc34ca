//! Upper- and lower-level policies.

pub mod error;
pub mod lower;
pub mod ppo;
pub mod reinforce;
pub mod upper;

pub use error::{PolicyError, Result};
pub use lower::{DecodeMode, LowerConfig, LowerModel, PreparedSub, Rollout};
pub use ppo::{PpoConfig, PpoReport, Sample, Step, Trajectory};
pub use reinforce::{ReinforceConfig, ReinforceReport};
pub use upper::{ActionDist, ActionMode, UpperConfig, UpperModel};
