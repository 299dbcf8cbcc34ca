//! Warm-up followed by joint training, with per-epoch metrics and
//! checkpoints.

use std::collections::VecDeque;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use htsp_autograd::{AdamW, Checkpoint};
use htsp_core::instance::generate_uniform;
use htsp_core::reference::{reference_tour, ReferenceConfig};
use htsp_core::spatial::build_knn;
use htsp_core::{DecomposeConfig, TspInstance};
use htsp_policy::ppo::{build_samples, ppo_update};
use htsp_policy::reinforce::reinforce_update;
use htsp_policy::{ActionMode, DecodeMode, LowerModel, PpoReport, PreparedSub, UpperModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, UpperKind};
use crate::episode::{rollout_episode, Episode, EpisodeOptions, LowerSolver, UpperPolicy};
use crate::error::{Result, TrainError};
use crate::warmup::{sample_subproblems, OracleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Warmup,
    Joint,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub stage: Stage,
    pub epoch: usize,
    /// Mean tour length of the episodes collected this epoch.
    pub mean_length: Option<f64>,
    /// Warm-up: greedy gap (%) against the exact path oracle. Joint: gap (%)
    /// of greedy solves against the reference tours.
    pub val_gap: Option<f64>,
    pub upper: Option<PpoReport>,
    pub lower_loss: Option<f64>,
    /// Mean sampled path length (local units) seen by lower updates.
    pub lower_mean_length: Option<f64>,
    pub lower_updates: usize,
    pub buffer: usize,
    pub seconds: f64,
}

/// Mixes a master seed with a stream tag and index (SplitMix64 finalizer).
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TAG_UPPER_INIT: u64 = 1;
const TAG_LOWER_INIT: u64 = 2;
const TAG_WARMUP: u64 = 10;
const TAG_JOINT: u64 = 11;
const TAG_ORACLE: u64 = 20;
const TAG_EVAL: u64 = 21;

/// Fixed instances with reference tour lengths for joint-stage validation.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub instances: Vec<TspInstance>,
    pub references: Vec<f64>,
}

impl EvalSet {
    pub fn generate(n: usize, count: usize, kicks: usize, seed: u64) -> Result<Self> {
        let mut instances = Vec::with_capacity(count);
        let mut references = Vec::with_capacity(count);
        for i in 0..count {
            let inst = generate_uniform(n, derive_seed(seed, 0, i as u64))?;
            let tour = reference_tour(&inst, &ReferenceConfig { kicks, seed: i as u64, ..Default::default() })?;
            references.push(inst.cycle_cost(&tour.order));
            instances.push(inst);
        }
        Ok(Self { instances, references })
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub upper: UpperModel,
    pub lower: LowerModel,
    upper_opt: AdamW,
    lower_opt: AdamW,
    buffer: VecDeque<PreparedSub>,
    stage: Stage,
    epoch: usize,
    oracle: Option<OracleSet>,
    eval: Option<EvalSet>,
    pool: rayon::ThreadPool,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: TrainConfig,
    stage: Stage,
    epoch: usize,
    buffer: Vec<PreparedSub>,
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| TrainError::Config(format!("worker pool: {e}")))
}

/// Models and config stored in a checkpoint, for solving.
pub fn load_models(ck: &Checkpoint) -> Result<(TrainConfig, UpperModel, LowerModel)> {
    let meta: Meta = serde_json::from_value(ck.meta.clone()).map_err(|e| TrainError::Meta(e.to_string()))?;
    let mut upper = UpperModel::new(meta.config.upper.clone(), 0);
    let mut lower = LowerModel::new(meta.config.lower.clone(), 0);
    ck.load_section("upper", &mut upper.store)?;
    ck.load_section("lower", &mut lower.store)?;
    Ok((meta.config, upper, lower))
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let upper = UpperModel::new(config.upper.clone(), derive_seed(config.seed, TAG_UPPER_INIT, 0));
        let lower = LowerModel::new(config.lower.clone(), derive_seed(config.seed, TAG_LOWER_INIT, 0));
        let upper_opt = AdamW::new(config.upper_optim.adamw(), &upper.store);
        let lower_opt = AdamW::new(config.lower_optim.adamw(), &lower.store);
        let stage = if config.warmup.enabled && config.warmup.epochs > 0 {
            Stage::Warmup
        } else if config.joint.enabled && config.joint.epochs > 0 {
            Stage::Joint
        } else {
            Stage::Done
        };
        let pool = build_pool(config.workers)?;
        Ok(Self { config, upper, lower, upper_opt, lower_opt, buffer: VecDeque::new(), stage, epoch: 0, oracle: None, eval: None, pool })
    }

    /// Resumes from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ck: &Checkpoint) -> Result<Self> {
        let meta: Meta = serde_json::from_value(ck.meta.clone()).map_err(|e| TrainError::Meta(e.to_string()))?;
        let mut t = Self::new(meta.config)?;
        ck.load_section("upper", &mut t.upper.store)?;
        ck.load_section("lower", &mut t.lower.store)?;
        ck.load_optimizer("upper_opt", &mut t.upper_opt, &t.upper.store)?;
        ck.load_optimizer("lower_opt", &mut t.lower_opt, &t.lower.store)?;
        t.stage = meta.stage;
        t.epoch = meta.epoch;
        t.buffer = meta.buffer.into();
        Ok(t)
    }

    /// Replaces the lower model (and resets its optimizer), e.g. to start
    /// joint training from a separately warmed-up model.
    pub fn set_lower(&mut self, lower: LowerModel) {
        self.lower_opt = AdamW::new(self.config.lower_optim.adamw(), &lower.store);
        self.config.lower = lower.config.clone();
        self.lower = lower;
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.models_only(self.buffer.iter().cloned().collect());
        ck.add_optimizer("upper_opt", &self.upper_opt, &self.upper.store);
        ck.add_optimizer("lower_opt", &self.lower_opt, &self.lower.store);
        ck
    }

    /// Weights and config without optimizer state or replay buffer; enough
    /// for [`load_models`] but not for [`Trainer::resume`].
    pub fn model_checkpoint(&self) -> Checkpoint {
        self.models_only(Vec::new())
    }

    fn models_only(&self, buffer: Vec<PreparedSub>) -> Checkpoint {
        let meta = Meta { kind: "htsp-train".into(), config: self.config.clone(), stage: self.stage, epoch: self.epoch, buffer };
        let mut ck = Checkpoint::new(serde_json::to_value(meta).expect("metadata serializes"));
        ck.add_section("upper", &self.upper.store);
        ck.add_section("lower", &self.lower.store);
        ck
    }

    fn oracle_set(&mut self) -> Result<&OracleSet> {
        if self.oracle.is_none() {
            let w = &self.config.warmup;
            let seed = derive_seed(self.config.seed, TAG_ORACLE, 0);
            self.oracle = Some(OracleSet::generate(w.val_nodes, w.val_size, w.instance_n.min(1000), self.config.problem.k, seed)?);
        }
        Ok(self.oracle.as_ref().expect("just built"))
    }

    /// Greedy gap (%) of the current lower model on the warm-up oracle set.
    pub fn oracle_gap(&mut self) -> Result<f64> {
        self.oracle_set()?;
        self.oracle.as_ref().expect("built").mean_greedy_gap(&self.lower)
    }

    fn eval_set(&mut self) -> Result<&EvalSet> {
        if self.eval.is_none() {
            let seed = derive_seed(self.config.seed, TAG_EVAL, 0);
            let e = &self.config.eval;
            self.eval = Some(EvalSet::generate(self.config.problem.n, e.instances, e.reference_kicks, seed)?);
        }
        Ok(self.eval.as_ref().expect("just built"))
    }

    fn upper_policy(&self, mode: ActionMode) -> UpperPolicy<'_> {
        match self.config.joint.upper {
            UpperKind::Learned => UpperPolicy::Learned { model: &self.upper, mode },
            UpperKind::Random => UpperPolicy::Random,
        }
    }

    /// Mean gap (%) of deterministic solves on the joint-stage validation set.
    pub fn eval_gap(&mut self) -> Result<f64> {
        self.eval_set()?;
        let eval = self.eval.as_ref().expect("built");
        let p = &self.config.problem;
        let upper = self.upper_policy(ActionMode::Mean);
        let lower = LowerSolver::Learned { model: &self.lower, mode: DecodeMode::Greedy, rollouts: 1 };
        let decompose = p.decompose();
        let k = p.k;
        let gaps: Vec<f64> = self.pool.install(|| {
            eval.instances
                .par_iter()
                .zip(&eval.references)
                .enumerate()
                .map(|(i, (inst, &r))| {
                    let knn = build_knn(inst, k.min(inst.n() - 1))?;
                    let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
                    let ep = rollout_episode(inst, &knn, decompose, upper, lower, &EpisodeOptions::default(), &mut rng)?;
                    Ok(100.0 * (ep.length - r) / r)
                })
                .collect::<Result<_>>()
        })?;
        Ok(gaps.iter().sum::<f64>() / gaps.len().max(1) as f64)
    }

    /// Runs the next epoch; `None` once both stages are finished.
    pub fn run_epoch(&mut self) -> Result<Option<EpochMetrics>> {
        let metrics = match self.stage {
            Stage::Done => return Ok(None),
            Stage::Warmup => self.warmup_epoch()?,
            Stage::Joint => self.joint_epoch()?,
        };
        self.epoch += 1;
        let finished = match self.stage {
            Stage::Warmup => self.epoch >= self.config.warmup.epochs,
            Stage::Joint => self.epoch >= self.config.joint.epochs,
            Stage::Done => false,
        };
        if finished {
            self.epoch = 0;
            self.stage = match self.stage {
                Stage::Warmup if self.config.joint.enabled && self.config.joint.epochs > 0 => Stage::Joint,
                _ => Stage::Done,
            };
        }
        Ok(Some(metrics))
    }

    fn warmup_epoch(&mut self) -> Result<EpochMetrics> {
        let start = Instant::now();
        let w = self.config.warmup.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, TAG_WARMUP, self.epoch as u64));
        let decompose = DecomposeConfig { sub_length: w.sub_length, max_new: w.max_num, use_fragment: true, use_knn: true };
        let (mut loss, mut len) = (0.0, 0.0);
        for _ in 0..w.batches_per_epoch {
            let subs = sample_subproblems(w.instance_n, self.config.problem.k, decompose, w.batch_size, 4..=w.sub_length, 8, &mut rng)?;
            let rep = reinforce_update(&mut self.lower, &mut self.lower_opt, &subs, &self.config.reinforce, &mut rng)?;
            loss += rep.loss;
            len += rep.mean_length;
        }
        let b = w.batches_per_epoch.max(1) as f64;
        let val_gap = if w.val_size > 0 { Some(self.oracle_gap()?) } else { None };
        Ok(EpochMetrics {
            stage: Stage::Warmup,
            epoch: self.epoch,
            mean_length: None,
            val_gap,
            upper: None,
            lower_loss: Some(loss / b),
            lower_mean_length: Some(len / b),
            lower_updates: w.batches_per_epoch,
            buffer: self.buffer.len(),
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn collect(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Episode>> {
        let j = &self.config.joint;
        let p = &self.config.problem;
        let seeds: Vec<(u64, u64)> = (0..j.episodes_per_epoch).map(|_| (rng.gen(), rng.gen())).collect();
        let upper = self.upper_policy(ActionMode::Sample);
        let lower = LowerSolver::Learned { model: &self.lower, mode: DecodeMode::Greedy, rollouts: 1 };
        let opts = EpisodeOptions {
            record_trajectory: j.upper == UpperKind::Learned && j.train_upper,
            record_subproblems: j.train_lower,
            time_limit: None,
        };
        let decompose = p.decompose();
        self.pool.install(|| {
            seeds
                .par_iter()
                .map(|&(inst_seed, ep_seed)| {
                    let inst = generate_uniform(p.n, inst_seed)?;
                    let knn = build_knn(&inst, p.k.min(p.n - 1))?;
                    let mut ep_rng = ChaCha8Rng::seed_from_u64(ep_seed);
                    rollout_episode(&inst, &knn, decompose, upper, lower, &opts, &mut ep_rng)
                })
                .collect()
        })
    }

    fn joint_epoch(&mut self) -> Result<EpochMetrics> {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, TAG_JOINT, self.epoch as u64));
        let episodes = self.collect(&mut rng)?;
        let mean_length = episodes.iter().map(|e| e.length).sum::<f64>() / episodes.len() as f64;
        let j = self.config.joint.clone();

        let mut upper_report = None;
        if j.upper == UpperKind::Learned && j.train_upper {
            let trajs: Vec<_> = episodes.iter().map(|e| e.trajectory.clone()).collect();
            let samples = build_samples(&trajs, &self.config.ppo);
            upper_report = Some(ppo_update(&mut self.upper, &mut self.upper_opt, &samples, &self.config.ppo, &mut rng)?);
        }

        let (mut lower_loss, mut lower_len, mut updates) = (None, None, 0);
        if j.train_lower {
            let mut fresh = 0usize;
            for ep in episodes {
                for s in ep.subproblems {
                    if self.buffer.len() == j.buffer_capacity.max(1) {
                        self.buffer.pop_front();
                    }
                    self.buffer.push_back(s);
                    fresh += 1;
                }
            }
            updates = fresh.div_ceil(j.lower_batch);
            let (mut l, mut m) = (0.0, 0.0);
            for _ in 0..updates {
                let batch: Vec<PreparedSub> =
                    (0..j.lower_batch).map(|_| self.buffer[rng.gen_range(0..self.buffer.len())].clone()).collect();
                let rep = reinforce_update(&mut self.lower, &mut self.lower_opt, &batch, &self.config.reinforce, &mut rng)?;
                l += rep.loss;
                m += rep.mean_length;
            }
            if updates > 0 {
                lower_loss = Some(l / updates as f64);
                lower_len = Some(m / updates as f64);
            }
        }

        let e = &self.config.eval;
        let last = self.epoch + 1 == j.epochs;
        let due = e.instances > 0 && (last || (e.every > 0 && (self.epoch + 1) % e.every == 0));
        let val_gap = if due { Some(self.eval_gap()?) } else { None };
        Ok(EpochMetrics {
            stage: Stage::Joint,
            epoch: self.epoch,
            mean_length: Some(mean_length),
            val_gap,
            upper: upper_report,
            lower_loss,
            lower_mean_length: lower_len,
            lower_updates: updates,
            buffer: self.buffer.len(),
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Runs to completion (or `max_epochs` epochs), appending metrics to
    /// `out_dir/metrics.jsonl` and refreshing `out_dir/latest.ckpt` after
    /// every epoch. `warmup.ckpt` and `final.ckpt` mark stage ends; the
    /// weights-only `model.ckpt` is written alongside `final.ckpt`.
    pub fn run(&mut self, out_dir: &Path, max_epochs: Option<usize>, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(|e| TrainError::Io(out_dir.display().to_string(), e))?;
        let metrics_path = out_dir.join("metrics.jsonl");
        let io_err = |e: std::io::Error| TrainError::Io(metrics_path.display().to_string(), e);
        let mut sink = OpenOptions::new().create(true).append(true).open(&metrics_path).map_err(io_err)?;
        let mut done = 0;
        while max_epochs.map_or(true, |m| done < m) {
            let before = self.stage;
            let Some(m) = self.run_epoch()? else { break };
            done += 1;
            writeln!(sink, "{}", serde_json::to_string(&m).expect("metrics serialize")).map_err(io_err)?;
            sink.flush().map_err(io_err)?;
            on_epoch(&m);
            let ck = self.checkpoint();
            ck.save(&out_dir.join("latest.ckpt"))?;
            let every = self.config.checkpoint_every;
            if every > 0 && done % every == 0 {
                ck.save(&out_dir.join(format!("{:?}-{:04}.ckpt", m.stage, m.epoch).to_lowercase()))?;
            }
            if before == Stage::Warmup && self.stage != Stage::Warmup {
                ck.save(&out_dir.join("warmup.ckpt"))?;
            }
            if self.stage == Stage::Done {
                ck.save(&out_dir.join("final.ckpt"))?;
                self.model_checkpoint().save(&out_dir.join("model.ckpt"))?;
            }
        }
        Ok(())
    }
}
