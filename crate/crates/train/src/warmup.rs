//! Sub-problem sampling for lower-model pre-training and the exact-oracle
//! validation set.

use htsp_core::instance::generate_uniform;
use htsp_core::oracle::held_karp_path;
use htsp_core::spatial::build_knn;
use htsp_core::{DecomposeConfig, SubProblem, TspInstance};
use htsp_policy::{DecodeMode, LowerModel, PreparedSub};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::episode::{rollout_episode, EpisodeOptions, LowerSolver, UpperPolicy};
use crate::error::Result;

/// Sub-problems met while building tours of fresh uniform instances with a
/// random upper policy and farthest insertion. Only sub-problems whose size
/// lies in `sizes` are kept, at most `per_instance` from each instance.
pub fn sample_subproblems(
    instance_n: usize,
    k: usize,
    decompose: DecomposeConfig,
    count: usize,
    sizes: std::ops::RangeInclusive<usize>,
    per_instance: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PreparedSub>> {
    let opts = EpisodeOptions { record_subproblems: true, ..Default::default() };
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let inst = generate_uniform(instance_n, rng.gen())?;
        let knn = build_knn(&inst, k.min(instance_n - 1))?;
        let mut ep_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        let ep = rollout_episode(&inst, &knn, decompose, UpperPolicy::Random, LowerSolver::Farthest, &opts, &mut ep_rng)?;
        let mut keep: Vec<PreparedSub> = ep.subproblems.into_iter().filter(|s| sizes.contains(&s.len())).collect();
        // random subset so that early and late sub-problems of an episode are both represented
        while keep.len() > per_instance {
            keep.swap_remove(rng.gen_range(0..keep.len()));
        }
        out.extend(keep.into_iter().take(count - out.len()));
    }
    Ok(out)
}

/// Exact open-path optimum of a prepared sub-problem (in its local units).
pub fn oracle_length(sub: &PreparedSub) -> Result<f64> {
    let inst = TspInstance::new(sub.coords.clone(), 0)?;
    let local = SubProblem::standalone((0..sub.len()).collect(), sub.source, sub.target)?;
    Ok(held_karp_path(&local, &inst)?.1)
}

/// Held-out sub-problems with their exact optima.
#[derive(Debug, Clone)]
pub struct OracleSet {
    pub subs: Vec<PreparedSub>,
    pub optimal: Vec<f64>,
}

impl OracleSet {
    /// `size` new-plus-fragment nodes per sub-problem (at most 16).
    pub fn generate(size: usize, count: usize, instance_n: usize, k: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let decompose = DecomposeConfig { sub_length: size, max_new: size / 2, use_fragment: true, use_knn: true };
        let subs = sample_subproblems(instance_n, k, decompose, count, size..=size, 4, &mut rng)?;
        let optimal = subs.iter().map(oracle_length).collect::<Result<_>>()?;
        Ok(Self { subs, optimal })
    }

    /// Per-sub-problem greedy gaps in percent.
    pub fn greedy_gaps(&self, model: &LowerModel) -> Result<Vec<f64>> {
        let mut gaps = Vec::with_capacity(self.subs.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut start = 0;
        while start < self.subs.len() {
            let m = self.subs[start].len();
            let mut end = start;
            while end < self.subs.len() && self.subs[end].len() == m && end - start < 64 {
                end += 1;
            }
            let batch: Vec<&PreparedSub> = self.subs[start..end].iter().collect();
            let rolls = model.decode(&batch, 1, DecodeMode::Greedy, &mut rng)?;
            for (r, opt) in rolls.iter().zip(&self.optimal[start..end]) {
                gaps.push(100.0 * (r[0].length - opt) / opt);
            }
            start = end;
        }
        Ok(gaps)
    }

    pub fn mean_greedy_gap(&self, model: &LowerModel) -> Result<f64> {
        let g = self.greedy_gaps(model)?;
        Ok(g.iter().sum::<f64>() / g.len() as f64)
    }
}
