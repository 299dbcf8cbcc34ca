//! A compact f64 reverse-mode autodiff engine: tensors, a recording tape,
//! the fused layers used by the hierarchical TSP policies, AdamW and a
//! versioned checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod special;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use graph::{Graph, Var, ZERO_ROW};
pub use layers::{Activation, LayerNorm, Linear, Mlp};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
