// SPDX-License-Identifier: Apache-2.0

//! A small dense-tensor engine with reverse-mode differentiation.
//!
//! It carries exactly what the retrieval encoders need: affine maps,
//! single-head GATv2 with edge features, layer normalization, dropout,
//! softmax and L2 normalization, the contrastive and margin losses, AdamW
//! with a linear warm-up, and a checkpoint format. All arithmetic is `f64`
//! and every random draw is seeded.

pub mod checkpoint;
mod graph;
pub mod layers;
pub mod loss;
pub mod optim;
mod param;
mod tensor;

pub use graph::{softmax_rows, GradBuf, Grads, Graph, Mode, Var};
pub use layers::{Affine, GatV2, LayerNorm};
pub use optim::{linear_warmup_lr, AdamWConfig, OptimizerState};
pub use param::{init_tensor, param_seed, Init, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("empty {0}")]
    EmptySet(&'static str),
    #[error("cannot normalize zero vector (row {0})")]
    ZeroNorm(usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
