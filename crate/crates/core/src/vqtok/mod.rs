//! Vector-quantized image tokenizer and the frozen probe classifier.

pub mod layers;
pub mod model;
pub mod probe;
pub mod quantize;
pub mod train;

pub use model::{cip_loss, ImageTokens, VqConfig, VqLossVars, VqMeta, VqModel, VQ_MAGIC};
pub use probe::{ProbeConfig, ProbeModel, PROBE_MAGIC};
pub use quantize::{nearest, quantize, usage, vq_loss_terms};
pub use train::{probe_auroc, train_probe, train_vq, train_vq_images, ProbeReport, ProbeTrainConfig, VqTrainConfig, VqTrainLog};

use crate::checkpoint::CheckpointError;

#[derive(Debug, thiserror::Error)]
pub enum VqError {
    #[error("image is {height}×{width}, model expects {expected}×{expected}")]
    ImageShape { expected: usize, height: usize, width: usize },
    #[error("token sequence has {got} entries, expected {expected}")]
    TokenCount { expected: usize, got: usize },
    #[error("token {index} at position {position} is outside the codebook (K = {k_img})")]
    TokenRange { position: usize, index: usize, k_img: usize },
    #[error("finding kind `{0}` never appears in the training split")]
    MissingClass(String),
    #[error("non-finite {what} loss at step {step}")]
    NonFinite { what: &'static str, step: u64 },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[cfg(test)]
mod tests;
