//! Desk-scale bidirectional image/report instruction tuning.
//!
//! The crate is organized as a pipeline:
//!
//! - [`numcore`]: tensors, reverse-mode autodiff, AdamW, gradient checking
//! - [`synthcorpus`]: procedurally rendered pseudo chest X-rays with reports and VQA
//! - [`vqtok`]: probe classifier and the vector-quantized image tokenizer
//! - [`lmcore`]: unified text+image vocabulary and a causal transformer
//! - [`instructset`]: instruction templates, response masking, task mixing
//! - [`trainer`]: two-stage fine-tuning and checkpoints
//! - [`evalsuite`]: report labeler and metrics (AUROC, F1, Jaccard, FID, BLEU, ROUGE-L, VQA)
//! - [`cli`]: configuration and the operator commands used by the `mmvq` binary
//!
//! Runnable walkthroughs live in `examples/`.

pub mod checkpoint;
pub mod cli;
pub mod evalsuite;
pub mod instructset;
pub mod lmcore;
pub mod numcore;
pub mod synthcorpus;
pub mod trainer;
pub mod vqtok;
