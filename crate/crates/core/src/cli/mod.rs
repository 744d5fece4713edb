//! Operator commands: configuration, pipeline stages, gradient checks and ablations.

pub mod commands;
pub mod config;
pub mod gradsuite;
pub mod pipeline;

use std::path::{Path, PathBuf};

pub use commands::{run, Cli, Command};
pub use config::{RunConfig, RESOLVED_FILE, SEED_ENV};
pub use pipeline::{
    ablate, evaluate, run_all, AblationResult, AblationRow, EvalOutcome, EvalSummary, ReconRow, Suite, Workspace,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("missing {what} at {}; run `{producer}` first", path.display())]
    MissingArtifact { what: &'static str, path: PathBuf, producer: &'static str },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Corpus(#[from] crate::synthcorpus::CorpusError),
    #[error(transparent)]
    Vq(#[from] crate::vqtok::VqError),
    #[error(transparent)]
    Lm(#[from] crate::lmcore::LmError),
    #[error(transparent)]
    Instruct(#[from] crate::instructset::InstructError),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
    #[error(transparent)]
    Num(#[from] crate::numcore::NumError),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }

    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests;
