//! Unified text+image vocabulary, causal transformer, embedding expansion and sampling.

pub mod decode;
pub mod model;
pub mod vocab;

pub use decode::{argmax, Constraint, Generation, KvCache, SampleMode, SamplerConfig, StopReason};
pub use model::{Expansion, LmConfig, TransformerLM, LM_MAGIC};
pub use vocab::{image_word, split_words, Vocab, EOS, PAD, UNK};

use crate::checkpoint::CheckpointError;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("sequence of {len} tokens exceeds context length {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("image index {index} at position {position} is outside the codebook (K = {k_img})")]
    ImageIndex { position: usize, index: usize, k_img: usize },
    #[error("text token inside image span: id {id} at position {position}")]
    TextInImageSpan { position: usize, id: usize },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[cfg(test)]
mod tests;
