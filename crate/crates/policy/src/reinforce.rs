//! Policy-gradient training of the lower model with a shared baseline.

use std::collections::BTreeMap;

use htsp_autograd::{AdamW, Gradients, Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, Result};
use crate::lower::{DecodeMode, LowerModel, PreparedSub, Rollout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReinforceConfig {
    pub rollouts: usize,
    /// Upper bound on attention-score entries per micro-batch; bounds memory.
    pub max_batch_elems: usize,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self { rollouts: 8, max_batch_elems: 4_000_000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReinforceReport {
    pub loss: f64,
    pub mean_length: f64,
    pub grad_norm: f64,
    pub subproblems: usize,
}

/// `R - b` per rollout with `R = -length` and `b` the mean return over the
/// rollouts of the same sub-problem.
pub fn shared_baseline_advantages(rolls: &[Rollout]) -> Vec<f64> {
    let mean = rolls.iter().map(|r| r.length).sum::<f64>() / rolls.len() as f64;
    rolls.iter().map(|r| mean - r.length).collect()
}

/// `-(1 / norm) * sum(adv * log p)` over the given rollouts, with log-probs
/// recomputed under the current parameters.
pub fn reinforce_loss<'g, 's>(
    model: &'s LowerModel,
    g: &'g Graph<'s>,
    subs: &[&PreparedSub],
    rolls: &[Vec<Rollout>],
    norm: f64,
) -> Result<Var<'g, 's>> {
    let choices: Vec<Vec<Vec<usize>>> = rolls.iter().map(|r| r.iter().map(|x| x.choices.clone()).collect()).collect();
    let adv: Vec<f64> = rolls.iter().flat_map(|r| shared_baseline_advantages(r)).map(|a| -a / norm).collect();
    let lp = model.sequence_log_probs(g, subs, &choices)?;
    let n = adv.len();
    Ok(lp.mul(g.constant(Tensor::new(&[n], adv))).sum())
}

/// Samples rollouts for every sub-problem, accumulates the policy gradient
/// over size-homogeneous micro-batches, and applies one optimizer step.
/// Sub-problems with fewer than four nodes have a single feasible path and
/// are skipped.
pub fn reinforce_update(
    model: &mut LowerModel,
    opt: &mut AdamW,
    subs: &[PreparedSub],
    cfg: &ReinforceConfig,
    rng: &mut impl Rng,
) -> Result<ReinforceReport> {
    if cfg.rollouts < 2 {
        return Err(PolicyError::Shape("the shared baseline needs at least two rollouts".into()));
    }
    let mut groups: BTreeMap<usize, Vec<&PreparedSub>> = BTreeMap::new();
    for s in subs.iter().filter(|s| s.len() >= 4) {
        groups.entry(s.len()).or_default().push(s);
    }
    let total: usize = groups.values().map(Vec::len).sum();
    let mut report = ReinforceReport { subproblems: total, ..Default::default() };
    if total == 0 {
        return Ok(report);
    }
    let norm = (total * cfg.rollouts) as f64;
    let heads = model.config.heads;
    let mut grads = Gradients::new(&model.store);
    for (&m, group) in &groups {
        let per_sub = heads * cfg.rollouts * (m - 1) * m;
        let chunk = (cfg.max_batch_elems / per_sub).max(1);
        for batch in group.chunks(chunk) {
            let rolls = model.decode(batch, cfg.rollouts, DecodeMode::Sample, rng)?;
            report.mean_length += rolls.iter().flatten().map(|r| r.length).sum::<f64>();
            let g = Graph::new(&model.store);
            let loss = reinforce_loss(model, &g, batch, &rolls, norm)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(PolicyError::NonFinite(format!("reinforce loss {value}")));
            }
            report.loss += value;
            g.backward(loss, &mut grads);
        }
    }
    if !grads.is_finite() {
        return Err(PolicyError::NonFinite("reinforce gradient".into()));
    }
    report.mean_length /= norm;
    report.grad_norm = opt.step(&mut model.store, &mut grads);
    Ok(report)
}
