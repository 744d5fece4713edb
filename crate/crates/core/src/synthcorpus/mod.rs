//! Procedural pseudo-CXR corpus: images, template reports and VQA pairs.

pub mod corpus;
pub mod finding;
pub mod render;
pub mod report;
pub mod vqa;

use std::path::{Path, PathBuf};

pub use corpus::{build_corpus, read_image, write_image, write_pgm, Corpus, CorpusMeta, Split, StudyRecord};
pub use finding::{validate_findings, Finding, Kind, Severity, Side};
pub use render::{render_image, render_view, Image, View, IMAGE_SIZE};
pub use report::{render_report, ReportStyle};
pub use vqa::{gen_vqa, AnswerFacts, QaPair, QuestionFamily};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid finding: {0}")]
    InvalidFinding(String),
    #[error("corpus needs at least 10 records, got {0}")]
    TooSmall(usize),
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn parse(path: &Path, e: serde_json::Error) -> Self {
        CorpusError::Format { path: path.to_path_buf(), msg: e.to_string() }
    }
}

#[cfg(test)]
mod tests;
