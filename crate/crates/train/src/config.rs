//! Training configuration, loadable from TOML.

use std::path::Path;

use htsp_autograd::AdamWConfig;
use htsp_core::DecomposeConfig;
use htsp_policy::{LowerConfig, PpoConfig, ReinforceConfig, UpperConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// Nodes per training instance.
    pub n: usize,
    /// Neighbors per node in the k-NN graph.
    pub k: usize,
    pub sub_length: usize,
    pub max_num: usize,
    pub use_fragment: bool,
    pub use_knn: bool,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { n: 1000, k: 40, sub_length: 200, max_num: 190, use_fragment: true, use_knn: true }
    }
}

impl ProblemConfig {
    pub fn decompose(&self) -> DecomposeConfig {
        DecomposeConfig {
            sub_length: self.sub_length,
            max_new: self.max_num,
            use_fragment: self.use_fragment,
            use_knn: self.use_knn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; non-positive disables it.
    pub max_grad_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 1e-6, max_grad_norm: 1.0 }
    }
}

impl OptimConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
            ..Default::default()
        }
    }
}

/// Lower-model pre-training on sub-problems produced by the decomposer with
/// a random upper policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmupConfig {
    pub enabled: bool,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    /// Size of the freshly sampled instances the sub-problems come from.
    pub instance_n: usize,
    pub sub_length: usize,
    pub max_num: usize,
    /// Held-out sub-problems compared against the exact path oracle.
    pub val_size: usize,
    /// Sub-problem size of the validation set (at most 16).
    pub val_nodes: usize,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epochs: 20,
            batches_per_epoch: 50,
            batch_size: 32,
            instance_n: 1000,
            sub_length: 200,
            max_num: 190,
            val_size: 200,
            val_nodes: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpperKind {
    Learned,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointConfig {
    pub enabled: bool,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub upper: UpperKind,
    pub train_upper: bool,
    /// When false the lower model stays frozen after warm-up.
    pub train_lower: bool,
    /// Sub-problems per lower update; one update per this many new buffer
    /// entries.
    pub lower_batch: usize,
    pub buffer_capacity: usize,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epochs: 50,
            episodes_per_epoch: 16,
            upper: UpperKind::Learned,
            train_upper: true,
            train_lower: true,
            lower_batch: 16,
            buffer_capacity: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Validation instances for the joint stage (0 disables evaluation).
    pub instances: usize,
    /// Evaluate every this many joint epochs (and after the last one).
    pub every: usize,
    /// Improvement rounds of the built-in reference tour generator.
    pub reference_kicks: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { instances: 8, every: 5, reference_kicks: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub workers: usize,
    /// Keep a numbered checkpoint every this many epochs besides `latest`
    /// (0 keeps only `latest`, `warmup` and `final`).
    pub checkpoint_every: usize,
    pub problem: ProblemConfig,
    pub upper: UpperConfig,
    pub lower: LowerConfig,
    pub upper_optim: OptimConfig,
    pub lower_optim: OptimConfig,
    pub ppo: PpoConfig,
    pub reinforce: ReinforceConfig,
    pub warmup: WarmupConfig,
    pub joint: JointConfig,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            checkpoint_every: 0,
            problem: ProblemConfig::default(),
            upper: UpperConfig::default(),
            lower: LowerConfig::default(),
            upper_optim: OptimConfig::default(),
            lower_optim: OptimConfig::default(),
            ppo: PpoConfig::default(),
            reinforce: ReinforceConfig::default(),
            warmup: WarmupConfig::default(),
            joint: JointConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.problem.decompose().validate().map_err(|e| TrainError::Config(e.to_string()))?;
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed must be at most {} (TOML integers are signed 64-bit)", i64::MAX));
        }
        if self.problem.n < 2 || self.problem.k == 0 {
            return bad("problem.n must be at least 2 and problem.k positive".into());
        }
        if self.warmup.enabled {
            let w = &self.warmup;
            DecomposeConfig { sub_length: w.sub_length, max_new: w.max_num, use_fragment: true, use_knn: true }
                .validate()
                .map_err(|e| TrainError::Config(format!("warmup: {e}")))?;
            if !(4..=16).contains(&w.val_nodes) {
                return bad(format!("warmup.val_nodes must be in 4..=16, got {}", w.val_nodes));
            }
            if w.instance_n < w.sub_length {
                return bad("warmup.instance_n must be at least warmup.sub_length".into());
            }
        }
        if self.reinforce.rollouts < 2 {
            return bad("reinforce.rollouts must be at least 2".into());
        }
        if self.lower.dim % self.lower.heads != 0 {
            return bad("lower.dim must be divisible by lower.heads".into());
        }
        if self.joint.lower_batch == 0 || self.joint.episodes_per_epoch == 0 {
            return bad("joint.lower_batch and joint.episodes_per_epoch must be positive".into());
        }
        Ok(())
    }
}
