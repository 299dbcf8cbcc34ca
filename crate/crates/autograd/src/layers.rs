//! Parameterized building blocks.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[input, output], input, rng);
        let b = bias.then(|| store.add_uniform(format!("{name}.b"), &[output], input, rng));
        Self { w, b }
    }

    pub fn forward<'g, 's>(&self, g: &'g Graph<'s>, x: Var<'g, 's>) -> Var<'g, 's> {
        let y = x.matmul(g.param(self.w));
        match self.b {
            Some(b) => y.add_bias(g.param(b)),
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        Self { gamma, beta }
    }

    pub fn forward<'g, 's>(&self, g: &'g Graph<'s>, x: Var<'g, 's>) -> Var<'g, 's> {
        x.layer_norm(g.param(self.gamma), g.param(self.beta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Stack of linear layers with an activation between consecutive layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims = [input, hidden.., output]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2);
        let layers =
            dims.windows(2).enumerate().map(|(i, d)| Linear::new(store, &format!("{name}.{i}"), d[0], d[1], true, rng)).collect();
        Self { layers, activation }
    }

    pub fn forward<'g, 's>(&self, g: &'g Graph<'s>, mut x: Var<'g, 's>) -> Var<'g, 's> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x);
            if i + 1 < self.layers.len() {
                x = match self.activation {
                    Activation::Relu => x.relu(),
                    Activation::Tanh => x.tanh(),
                };
            }
        }
        x
    }
}
