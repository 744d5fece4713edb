//! Dense tensors, tape autodiff, AdamW and a finite-difference gradient oracle.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod optim;
pub mod param;
pub mod real;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use kernels::{ConvSpec, Segment};
pub use loss::softmax_cross_entropy;
pub use optim::{clip_grad_norm, AdamWConfig, AdamWState};
pub use param::{ParamId, ParamSet, Parameter};
pub use real::Real;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("{context}: shape mismatch (expected {expected:?}, got {got:?})")]
    ShapeMismatch { context: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("non-finite loss while probing {param}[{index}]")]
    NonFiniteLoss { param: String, index: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

#[cfg(test)]
mod tests;
