//! The hierarchical solve loop: pick a point, cut out a sub-problem, solve
//! it as an open path, splice it back.

use std::sync::Arc;
use std::time::{Duration, Instant};

use htsp_core::heuristics::{farthest_insertion_open, ExternalSolver, RandomUpper};
use htsp_core::pixel::featurize;
use htsp_core::spatial::build_knn;
use htsp_core::{DecomposeConfig, KnnGraph, OpenPath, SubProblem, Tour, TspInstance};
use htsp_policy::upper::to_point;
use htsp_policy::{ActionMode, DecodeMode, LowerModel, PreparedSub, Step, Trajectory, UpperModel};
use rand::Rng;

use crate::error::Result;

#[derive(Clone, Copy)]
pub enum UpperPolicy<'a> {
    Learned { model: &'a UpperModel, mode: ActionMode },
    Random,
}

#[derive(Clone, Copy)]
pub enum LowerSolver<'a> {
    Learned { model: &'a LowerModel, mode: DecodeMode, rollouts: usize },
    Farthest,
    External(&'a ExternalSolver),
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeOptions {
    /// Keep upper-level transitions for PPO.
    pub record_trajectory: bool,
    /// Keep sub-problems (four nodes or more) for lower-level training.
    pub record_subproblems: bool,
    /// After this much wall time the remaining sub-problems are solved by
    /// farthest insertion.
    pub time_limit: Option<Duration>,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub tour: Tour,
    pub length: f64,
    /// Length of the initial two-node cycle.
    pub initial_length: f64,
    pub rewards: Vec<f64>,
    pub trajectory: Trajectory,
    pub subproblems: Vec<PreparedSub>,
    /// Sub-problems solved by the fallback heuristic (time limit or
    /// external-solver failure).
    pub fallbacks: usize,
}

impl Episode {
    pub fn steps(&self) -> usize {
        self.rewards.len()
    }
}

fn solve_sub(
    lower: LowerSolver<'_>,
    sub: &SubProblem,
    inst: &TspInstance,
    fallback: bool,
    rng: &mut impl Rng,
) -> Result<(OpenPath, bool)> {
    if fallback {
        return Ok((farthest_insertion_open(sub, inst), true));
    }
    Ok(match lower {
        LowerSolver::Learned { model, mode, rollouts } => (model.solve(sub, inst, mode, rollouts, rng)?, false),
        LowerSolver::Farthest => (farthest_insertion_open(sub, inst), false),
        LowerSolver::External(ext) => {
            let out = ext.solve(sub, inst);
            (out.path, out.fallback.is_some())
        }
    })
}

/// Runs one episode to a complete tour.
pub fn rollout_episode(
    inst: &TspInstance,
    knn: &KnnGraph,
    decompose: DecomposeConfig,
    upper: UpperPolicy<'_>,
    lower: LowerSolver<'_>,
    opts: &EpisodeOptions,
    rng: &mut impl Rng,
) -> Result<Episode> {
    let start = Instant::now();
    let mut dec = htsp_core::decompose::Decomposer::new(inst, knn, decompose)?;
    let initial_length = dec.tour().length(inst);
    let mut random = RandomUpper::new(rng.gen());
    let mut rewards = Vec::new();
    let mut trajectory = Vec::new();
    let mut subproblems = Vec::new();
    let mut fallbacks = 0;
    while !dec.is_complete() {
        let (coord, step) = match upper {
            UpperPolicy::Random => (random.next_action(), None),
            UpperPolicy::Learned { model, mode } => {
                let obs = Arc::new(featurize(inst, dec.tour(), model.config.grid_h, model.config.grid_w));
                let (dist, value) = model.policy(&obs)?;
                let action = dist.act(mode, rng);
                let step = opts
                    .record_trajectory
                    .then(|| Step { obs, action, log_prob: dist.log_prob(action), value, reward: 0.0 });
                (to_point(action), step)
            }
        };
        let sub = dec.generate(coord)?;
        let late = opts.time_limit.is_some_and(|t| start.elapsed() > t);
        let (path, fell_back) = solve_sub(lower, &sub, inst, late, rng)?;
        fallbacks += fell_back as usize;
        if opts.record_subproblems && sub.len() >= 4 {
            subproblems.push(PreparedSub::new(&sub, inst));
        }
        let reward = dec.merge(&sub, &path)?;
        rewards.push(reward);
        if let Some(mut s) = step {
            s.reward = reward;
            trajectory.push(s);
        }
    }
    let length = dec.tour().length(inst);
    let tour = dec.into_tour()?;
    Ok(Episode { tour, length, initial_length, rewards, trajectory, subproblems, fallbacks })
}

/// Builds the k-NN graph (k capped at `n - 1`) and runs one episode.
pub fn solve_instance(
    inst: &TspInstance,
    k: usize,
    decompose: DecomposeConfig,
    upper: UpperPolicy<'_>,
    lower: LowerSolver<'_>,
    opts: &EpisodeOptions,
    rng: &mut impl Rng,
) -> Result<Episode> {
    let knn = build_knn(inst, k.min(inst.n() - 1).max(1))?;
    rollout_episode(inst, &knn, decompose, upper, lower, opts, rng)
}
