//! Proximal policy optimization for the upper-level model.

use std::sync::Arc;

use htsp_autograd::{AdamW, Gradients, Graph, Var};
use htsp_core::pixel::NodeFeatures;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, Result};
use crate::upper::UpperModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            epochs: 4,
            minibatch: 64,
            gamma: 1.0,
            gae_lambda: 0.95,
            value_coef: 1.0,
            entropy_coef: 0.01,
            normalize_advantages: true,
        }
    }
}

/// One upper-level decision.
#[derive(Debug, Clone)]
pub struct Step {
    pub obs: Arc<NodeFeatures>,
    pub action: [f64; 2],
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
}

/// Steps of one episode in order; the last step is terminal.
pub type Trajectory = Vec<Step>;

/// Generalized advantage estimates with a zero bootstrap after the final step.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len(), "rewards and values differ in length");
    let mut adv = vec![0.0; rewards.len()];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    adv
}

/// Training sample after advantage estimation.
#[derive(Debug, Clone)]
pub struct Sample {
    pub obs: Arc<NodeFeatures>,
    pub action: [f64; 2],
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

pub fn build_samples(trajectories: &[Trajectory], cfg: &PpoConfig) -> Vec<Sample> {
    let mut out = Vec::new();
    for traj in trajectories {
        let rewards: Vec<f64> = traj.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = traj.iter().map(|s| s.value).collect();
        let adv = compute_gae(&rewards, &values, cfg.gamma, cfg.gae_lambda);
        for (s, a) in traj.iter().zip(adv) {
            out.push(Sample { obs: s.obs.clone(), action: s.action, old_log_prob: s.log_prob, advantage: a, ret: a + s.value });
        }
    }
    out
}

pub struct PpoLoss<'g, 's> {
    pub total: Var<'g, 's>,
    pub clip: Var<'g, 's>,
    pub value: Var<'g, 's>,
    pub entropy: Var<'g, 's>,
    pub ratio: Vec<f64>,
}

/// `L = L_clip + c_v * L_value - c_e * H` over a minibatch, where
/// `L_clip = -mean(min(r A, clip(r, 1 - eps, 1 + eps) A))`.
pub fn ppo_loss<'g, 's>(
    model: &'s UpperModel,
    g: &'g Graph<'s>,
    batch: &[&Sample],
    advantages: &[f64],
    cfg: &PpoConfig,
) -> Result<PpoLoss<'g, 's>> {
    let obs: Vec<&NodeFeatures> = batch.iter().map(|s| s.obs.as_ref()).collect();
    let out = model.forward(g, &obs)?;
    let actions: Vec<f64> = batch.iter().flat_map(|s| s.action).collect();
    let log_prob = out.alpha.beta_log_prob(out.beta, &actions).sum_last();
    let old: Vec<f64> = batch.iter().map(|s| -s.old_log_prob).collect();
    let ratio = log_prob.add(g.constant(htsp_autograd::Tensor::new(&[batch.len()], old))).exp();
    let surr1 = ratio.mul_const(advantages);
    let surr2 = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps).mul_const(advantages);
    let clip = surr1.min(surr2).mean().neg();
    let returns: Vec<f64> = batch.iter().map(|s| -s.ret).collect();
    let value = out
        .value
        .reshape(&[batch.len()])
        .add(g.constant(htsp_autograd::Tensor::new(&[batch.len()], returns)))
        .square()
        .mean();
    let entropy = out.alpha.beta_entropy(out.beta).sum_last().mean();
    let total = clip.add(value.scale(cfg.value_coef)).sub(entropy.scale(cfg.entropy_coef));
    let ratio_values = ratio.value().data.clone();
    Ok(PpoLoss { total, clip, value, entropy, ratio: ratio_values })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoReport {
    pub clip_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub updates: usize,
}

fn normalized(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    adv.iter().map(|a| (a - mean) / std).collect()
}

/// Runs `cfg.epochs` passes of shuffled minibatch updates. Aborts before the
/// optimizer step if the loss or gradient is not finite.
pub fn ppo_update(
    model: &mut UpperModel,
    opt: &mut AdamW,
    samples: &[Sample],
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<PpoReport> {
    let mut report = PpoReport::default();
    if samples.is_empty() {
        return Ok(report);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut clipped = 0usize;
    let mut seen = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let raw: Vec<f64> = batch.iter().map(|s| s.advantage).collect();
            let adv = if cfg.normalize_advantages && raw.len() > 1 { normalized(&raw) } else { raw };
            let mut grads = Gradients::new(&model.store);
            {
                let g = Graph::new(&model.store);
                let loss = ppo_loss(model, &g, &batch, &adv, cfg)?;
                let total = loss.total.item();
                if !total.is_finite() {
                    return Err(PolicyError::NonFinite(format!(
                        "ppo loss {total} (clip {}, value {}, entropy {})",
                        loss.clip.item(),
                        loss.value.item(),
                        loss.entropy.item()
                    )));
                }
                g.backward(loss.total, &mut grads);
                report.clip_loss += loss.clip.item();
                report.value_loss += loss.value.item();
                report.entropy += loss.entropy.item();
                clipped += loss.ratio.iter().filter(|r| (*r - 1.0).abs() > cfg.clip_eps).count();
                seen += batch.len();
            }
            if !grads.is_finite() {
                return Err(PolicyError::NonFinite("ppo gradient".into()));
            }
            report.grad_norm += opt.step(&mut model.store, &mut grads);
            report.updates += 1;
        }
    }
    let k = report.updates as f64;
    report.clip_loss /= k;
    report.value_loss /= k;
    report.entropy /= k;
    report.grad_norm /= k;
    report.clip_fraction = clipped as f64 / seen as f64;
    Ok(report)
}
