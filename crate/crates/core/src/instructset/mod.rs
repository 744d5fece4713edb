//! Instruction-tuning data: template rendering, response masking, objectives and task mixing.

pub mod example;
pub mod mix;
pub mod tasks;
pub mod template;

pub use example::{batch_loss, build_example, instruct_loss, joint_loss, prompt_ids, BatchLoss, LossValue, Objective, TokenizedExample};
pub use mix::{MixSchedule, MixStream, Stage, StudySource};
pub use tasks::{
    build_text_vocab, grammar_corpus, instruction_list, nl_if_pairs, pick_instruction, Content, NlIfPair, PromptRecord, TaskKind,
    C2R_INSTRUCTIONS, R2C_INSTRUCTIONS,
};

#[derive(Debug, thiserror::Error)]
pub enum InstructError {
    #[error("template: {0}")]
    Template(String),
    #[error("no instruction list for task {0}")]
    NoInstructionList(&'static str),
    #[error("empty response (study {study_id:?})")]
    EmptyResponse { study_id: Option<String> },
    #[error("example of {len} tokens exceeds context {max} (study {study_id:?})")]
    TooLong { len: usize, max: usize, study_id: Option<String> },
    #[error("word {word:?} is not in the vocabulary (study {study_id:?})")]
    UnknownWord { word: String, study_id: Option<String> },
    #[error("{0}")]
    EmptyPool(String),
    #[error("{0}")]
    Config(String),
}

#[cfg(test)]
mod tests;
