//! Task kinds, prompt records, instruction variants and the text-only set.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::template;
use super::InstructError;
use crate::lmcore::Vocab;
use crate::numcore::rng::{stream_rng, Rng};
use crate::synthcorpus::report::all_report_sentences;
use crate::synthcorpus::vqa::all_vqa_strings;
use crate::synthcorpus::{Kind, ReportStyle, StudyRecord};
use crate::vqtok::ImageTokens;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    NlIf,
    ReportToCxr,
    CxrToReport,
    CxrVqa,
}

impl TaskKind {
    /// Order used by mixing proportions: C2R, R2C, VQA, NL-IF.
    pub const MIX_ORDER: [TaskKind; 4] = [TaskKind::CxrToReport, TaskKind::ReportToCxr, TaskKind::CxrVqa, TaskKind::NlIf];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::NlIf => "nl_if",
            TaskKind::ReportToCxr => "r2c",
            TaskKind::CxrToReport => "c2r",
            TaskKind::CxrVqa => "vqa",
        }
    }

    pub fn mix_index(self) -> usize {
        TaskKind::MIX_ORDER.iter().position(|&k| k == self).expect("listed")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Content {
    Text(String),
    Image(ImageTokens),
}

impl Content {
    /// Serialized form placed in the template.
    pub fn render(&self) -> String {
        match self {
            Content::Text(s) => s.clone(),
            Content::Image(t) => Vocab::image_span(t),
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Content::Image(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub task: TaskKind,
    pub instruction: String,
    pub input: Content,
    pub response: Content,
    pub source_study: Option<String>,
}

impl PromptRecord {
    pub fn validate(&self) -> Result<(), InstructError> {
        let ok = match self.task {
            TaskKind::ReportToCxr => !self.input.is_image() && self.response.is_image(),
            TaskKind::CxrToReport | TaskKind::CxrVqa => self.input.is_image() && !self.response.is_image(),
            TaskKind::NlIf => !self.input.is_image() && !self.response.is_image(),
        };
        if ok {
            Ok(())
        } else {
            Err(InstructError::Template(format!("content kinds do not fit task {}", self.task.name())))
        }
    }

    pub fn render(&self) -> String {
        template::render(&self.instruction, &self.input.render(), &self.response.render())
    }

    pub fn render_prompt(&self) -> String {
        template::render_prompt(&self.instruction, &self.input.render())
    }
}

pub const C2R_INSTRUCTIONS: [&str; 10] = [
    "Write the radiology report for this chest image.",
    "Describe the findings seen in the chest image.",
    "Read the chest radiograph and report the findings.",
    "Give a radiology report that matches the chest image.",
    "Report what the chest radiograph shows.",
    "Summarize this chest image as a radiology report.",
    "Draft the findings and impression for this chest image.",
    "Compose a report describing this chest radiograph.",
    "State the findings of the given chest image.",
    "Provide a radiology report for the chest radiograph below.",
];

pub const R2C_INSTRUCTIONS: [&str; 10] = [
    "Generate a chest image that matches this report.",
    "Create a chest radiograph image from the report.",
    "Generate the chest image described by the report.",
    "Create an image of the chest consistent with the report.",
    "Using the report, generate a matching chest image.",
    "From the given report, create the corresponding chest image.",
    "Generate a radiograph image showing the reported findings.",
    "Create a chest image that agrees with the findings below.",
    "Generate an image of a chest radiograph for this report.",
    "Read the report and create a chest image to match it.",
];

pub fn instruction_list(task: TaskKind) -> Result<&'static [&'static str; 10], InstructError> {
    match task {
        TaskKind::CxrToReport => Ok(&C2R_INSTRUCTIONS),
        TaskKind::ReportToCxr => Ok(&R2C_INSTRUCTIONS),
        other => Err(InstructError::NoInstructionList(other.name())),
    }
}

/// Uniform draw from the task's variants.
pub fn pick_instruction(task: TaskKind, rng: &mut Rng) -> Result<&'static str, InstructError> {
    let list = instruction_list(task)?;
    Ok(list[rng.random_range(0..list.len())])
}

pub fn c2r_record(study: &StudyRecord, tokens: &ImageTokens, style: ReportStyle, instruction: &str) -> PromptRecord {
    PromptRecord {
        task: TaskKind::CxrToReport,
        instruction: instruction.to_string(),
        input: Content::Image(tokens.clone()),
        response: Content::Text(study.report(style).to_string()),
        source_study: Some(study.study_id.clone()),
    }
}

pub fn r2c_record(study: &StudyRecord, tokens: &ImageTokens, style: ReportStyle, instruction: &str) -> PromptRecord {
    r2c_from_report(study.report(style), tokens, instruction, Some(study.study_id.clone()))
}

pub fn r2c_from_report(report: &str, tokens: &ImageTokens, instruction: &str, source: Option<String>) -> PromptRecord {
    PromptRecord {
        task: TaskKind::ReportToCxr,
        instruction: instruction.to_string(),
        input: Content::Text(report.to_string()),
        response: Content::Image(tokens.clone()),
        source_study: source,
    }
}

/// The question is the instruction; the image is the input.
pub fn vqa_record(study: &StudyRecord, tokens: &ImageTokens, qa: usize) -> PromptRecord {
    let pair = &study.vqa[qa];
    PromptRecord {
        task: TaskKind::CxrVqa,
        instruction: pair.question.clone(),
        input: Content::Image(tokens.clone()),
        response: Content::Text(pair.answer.clone()),
        source_study: Some(study.study_id.clone()),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlIfPair {
    pub instruction: String,
    pub input: String,
    pub response: String,
}

impl NlIfPair {
    pub fn record(&self) -> PromptRecord {
        PromptRecord {
            task: TaskKind::NlIf,
            instruction: self.instruction.clone(),
            input: Content::Text(self.input.clone()),
            response: Content::Text(self.response.clone()),
            source_study: None,
        }
    }
}

const COUNT_WORDS: [&str; 6] = ["None.", "One.", "Two.", "Three.", "Four.", "Five."];
const NL_IF_FIXED: [(&str, &str, &str); 8] = [
    ("Say hello.", "", "Hello."),
    ("Answer yes or no: is this a task?", "", "Yes."),
    ("Answer yes or no: is the sky green?", "", "No."),
    ("Count the words.", "one two three", "Three."),
    ("Count the words.", "one two", "Two."),
    ("Repeat the word.", "chest", "chest"),
    ("Name the organ in the chest that pumps blood.", "", "The heart."),
    ("Name the organs used to breathe.", "", "The lungs."),
];
const COPY_INSTRUCTION: &str = "Repeat the sentence.";
const SHORTEN_INSTRUCTION: &str = "Rewrite the report in short form.";
const COUNT_INSTRUCTION: &str = "Count the findings in the report.";

fn yes_no_instruction(kind: Kind) -> String {
    format!("Answer yes or no: does the report mention {}?", crate::synthcorpus::vqa::noun(kind))
}

/// Text-only pairs over the report grammar: copying, shortening, counting and
/// yes/no questions, plus a few fixed general items.
pub fn nl_if_pairs<'a>(studies: impl IntoIterator<Item = &'a StudyRecord>, per_study: usize, seed: u64) -> Vec<NlIfPair> {
    let mut out: Vec<NlIfPair> = NL_IF_FIXED
        .iter()
        .map(|&(i, x, y)| NlIfPair { instruction: i.into(), input: x.into(), response: y.into() })
        .collect();
    for (n, s) in studies.into_iter().enumerate() {
        let mut rng = stream_rng(seed, "nl-if", n as u64);
        let verbose = s.report(ReportStyle::Verbose).to_string();
        let concise = s.report(ReportStyle::Concise).to_string();
        let pathologies = s.findings.iter().filter(|f| f.kind != Kind::NoFinding).count();
        let kind = *Kind::PATHOLOGIES.choose(&mut rng).expect("non-empty");
        let mentioned = s.findings.iter().any(|f| f.kind == kind);
        let candidates = [
            NlIfPair { instruction: COPY_INSTRUCTION.into(), input: concise.clone(), response: concise.clone() },
            NlIfPair { instruction: SHORTEN_INSTRUCTION.into(), input: verbose, response: concise.clone() },
            NlIfPair { instruction: COUNT_INSTRUCTION.into(), input: concise.clone(), response: COUNT_WORDS[pathologies.min(5)].into() },
            NlIfPair {
                instruction: yes_no_instruction(kind),
                input: concise,
                response: if mentioned { "Yes." } else { "No." }.into(),
            },
        ];
        for _ in 0..per_study {
            out.push(candidates.choose(&mut rng).expect("non-empty").clone());
        }
    }
    out
}

/// Every surface string the tokenizer must cover.
pub fn grammar_corpus() -> Vec<String> {
    let mut out = vec![template::render("", "", ""), "<>".to_string()];
    out.extend(C2R_INSTRUCTIONS.iter().map(|s| s.to_string()));
    out.extend(R2C_INSTRUCTIONS.iter().map(|s| s.to_string()));
    out.extend(all_report_sentences());
    out.extend(all_vqa_strings());
    out.extend(["Findings:", "Impression:"].iter().map(|s| s.to_string()));
    out.extend(COUNT_WORDS.iter().map(|s| s.to_string()));
    out.extend(NL_IF_FIXED.iter().flat_map(|(a, b, c)| [a.to_string(), b.to_string(), c.to_string()]));
    out.extend([COPY_INSTRUCTION, SHORTEN_INSTRUCTION, COUNT_INSTRUCTION, "Yes.", "No."].iter().map(|s| s.to_string()));
    out.extend(Kind::PATHOLOGIES.iter().map(|&k| yes_no_instruction(k)));
    out
}

pub fn build_text_vocab() -> Vocab {
    let g = grammar_corpus();
    Vocab::build(g.iter().map(String::as_str))
}
