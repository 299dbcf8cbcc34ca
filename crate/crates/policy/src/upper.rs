//! Upper-level actor-critic over grid pseudo-images.
//!
//! Nodes are embedded by a shared linear layer, max-pooled per grid cell,
//! passed through three stride-2 convolutions and pooled to a 2x2 map, which
//! gives `4 * conv_channels[2]` features (128 with the defaults). An actor
//! MLP outputs the parameters of two independent Beta distributions, one per
//! action coordinate; a critic MLP outputs the state value.

use htsp_autograd::{Activation, Graph, Linear, Mlp, ParamId, ParamStore, Tensor, Var};
use htsp_core::pixel::{NodeFeatures, NODE_FEATURES};
use htsp_core::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, Result};

/// Smallest distance kept between a sampled coordinate and the interval ends.
pub const ACTION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpperConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub embed_channels: usize,
    pub conv_channels: [usize; 3],
    pub kernel: usize,
    pub hidden: usize,
    /// Linear layers per head.
    pub mlp_layers: usize,
    /// Use tanh instead of ReLU in the encoder.
    pub smooth: bool,
}

impl Default for UpperConfig {
    fn default() -> Self {
        Self {
            grid_h: 32,
            grid_w: 32,
            embed_channels: 16,
            conv_channels: [16, 32, 32],
            kernel: 3,
            hidden: 128,
            mlp_layers: 4,
            smooth: false,
        }
    }
}

impl UpperConfig {
    pub fn feature_dim(&self) -> usize {
        4 * self.conv_channels[2]
    }
}

#[derive(Debug, Clone)]
pub struct UpperModel {
    pub config: UpperConfig,
    pub store: ParamStore,
    embed: Linear,
    convs: Vec<(ParamId, ParamId)>,
    actor: Mlp,
    critic: Mlp,
}

/// Batched outputs: `alpha`, `beta` are `[B, 2]`, `value` is `[B, 1]`.
pub struct UpperOutput<'g, 's> {
    pub alpha: Var<'g, 's>,
    pub beta: Var<'g, 's>,
    pub value: Var<'g, 's>,
}

impl UpperModel {
    pub fn new(config: UpperConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let embed = Linear::new(&mut store, "upper.embed", NODE_FEATURES, c.embed_channels, true, &mut rng);
        let mut convs = Vec::new();
        let mut cin = c.embed_channels;
        for (i, &cout) in c.conv_channels.iter().enumerate() {
            let fan_in = cin * c.kernel * c.kernel;
            let w = store.add_uniform(format!("upper.conv{i}.w"), &[cout, cin, c.kernel, c.kernel], fan_in, &mut rng);
            let b = store.add_uniform(format!("upper.conv{i}.b"), &[cout], fan_in, &mut rng);
            convs.push((w, b));
            cin = cout;
        }
        let head_dims = |out: usize| {
            let mut d = vec![c.feature_dim()];
            d.extend(std::iter::repeat(c.hidden).take(c.mlp_layers.saturating_sub(1)));
            d.push(out);
            d
        };
        let actor = Mlp::new(&mut store, "upper.actor", &head_dims(4), Activation::Tanh, &mut rng);
        let critic = Mlp::new(&mut store, "upper.critic", &head_dims(1), Activation::Tanh, &mut rng);
        // Start close to the uniform Beta(1, 1) policy.
        let last = actor.layers.last().expect("non-empty head");
        store.get_mut(last.w).scale(0.01);
        Self { config, store, embed, convs, actor, critic }
    }

    fn act<'g, 's>(&self, x: Var<'g, 's>) -> Var<'g, 's> {
        if self.config.smooth {
            x.tanh()
        } else {
            x.relu()
        }
    }

    pub fn check_observation(&self, obs: &NodeFeatures) -> Result<()> {
        if obs.height != self.config.grid_h || obs.width != self.config.grid_w {
            return Err(PolicyError::Shape(format!(
                "observation grid {}x{} but model expects {}x{}",
                obs.height, obs.width, self.config.grid_h, self.config.grid_w
            )));
        }
        Ok(())
    }

    /// Shared encoder: `[B, feature_dim]` instance embeddings.
    pub fn encode<'g, 's>(&'s self, g: &'g Graph<'s>, obs: &[&NodeFeatures]) -> Result<Var<'g, 's>> {
        let c = &self.config;
        let mut images = Vec::with_capacity(obs.len());
        for o in obs {
            self.check_observation(o)?;
            let x = g.constant(Tensor::new(&[o.rows(), NODE_FEATURES], o.data.clone()));
            let e = self.act(self.embed.forward(g, x));
            images.push(e.scatter_max(&o.cells, c.grid_h, c.grid_w));
        }
        let mut x = g.stack(&images);
        for &(w, b) in &self.convs {
            x = self.act(x.conv2d(g.param(w), g.param(b), 2, c.kernel / 2));
        }
        Ok(x.adaptive_avg_pool(2, 2).reshape(&[obs.len(), c.feature_dim()]))
    }

    pub fn forward<'g, 's>(&'s self, g: &'g Graph<'s>, obs: &[&NodeFeatures]) -> Result<UpperOutput<'g, 's>> {
        let h = self.encode(g, obs)?;
        let a = self.actor.forward(g, h);
        let alpha = a.slice_last(0, 2).softplus().add_scalar(1.0);
        let beta = a.slice_last(2, 2).softplus().add_scalar(1.0);
        let value = self.critic.forward(g, h);
        Ok(UpperOutput { alpha, beta, value })
    }

    /// Evaluates one observation without keeping the graph.
    pub fn policy(&self, obs: &NodeFeatures) -> Result<(ActionDist, f64)> {
        let g = Graph::new(&self.store);
        let out = self.forward(&g, &[obs])?;
        let (a, b) = (out.alpha.value(), out.beta.value());
        let dist = ActionDist { alpha: [a.data[0], a.data[1]], beta: [b.data[0], b.data[1]] };
        let value = out.value.item();
        if !dist.alpha.iter().chain(&dist.beta).all(|v| v.is_finite()) || !value.is_finite() {
            return Err(PolicyError::NonFinite(format!("upper forward produced {dist:?}, value {value}")));
        }
        Ok((dist, value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    Sample,
    Mean,
}

/// Independent Beta distributions for the two action coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDist {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
}

impl ActionDist {
    pub fn mean(&self) -> [f64; 2] {
        [0, 1].map(|i| self.alpha[i] / (self.alpha[i] + self.beta[i]))
    }

    pub fn sample(&self, rng: &mut impl Rng) -> [f64; 2] {
        [0, 1].map(|i| {
            let d = Beta::new(self.alpha[i], self.beta[i]).expect("parameters are >= 1");
            d.sample(rng).clamp(ACTION_EPS, 1.0 - ACTION_EPS)
        })
    }

    pub fn act(&self, mode: ActionMode, rng: &mut impl Rng) -> [f64; 2] {
        match mode {
            ActionMode::Sample => self.sample(rng),
            ActionMode::Mean => self.mean(),
        }
    }

    pub fn log_prob(&self, a: [f64; 2]) -> f64 {
        use htsp_autograd::special::ln_gamma;
        (0..2)
            .map(|i| {
                let (al, be, x) = (self.alpha[i], self.beta[i], a[i]);
                ln_gamma(al + be) - ln_gamma(al) - ln_gamma(be) + (al - 1.0) * x.ln() + (be - 1.0) * (1.0 - x).ln()
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        (0..2).map(|i| htsp_autograd::graph::beta_entropy(self.alpha[i], self.beta[i])).sum()
    }
}

pub fn to_point(a: [f64; 2]) -> Point {
    Point::new(a[0], a[1])
}
