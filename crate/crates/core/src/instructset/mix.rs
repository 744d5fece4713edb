//! Stage-dependent task mixing.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tasks::{c2r_record, pick_instruction, r2c_record, vqa_record, NlIfPair, PromptRecord, TaskKind};
use super::InstructError;
use crate::numcore::rng::{stream_rng, Rng};
use crate::synthcorpus::{ReportStyle, StudyRecord, View};
use crate::vqtok::ImageTokens;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Stage, InstructError> {
        match n {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            _ => Err(InstructError::Config(format!("stage must be 1 or 2, got {n}"))),
        }
    }
}

/// Relative weights in [`TaskKind::MIX_ORDER`] order (C2R, R2C, VQA, NL-IF).
/// Draws are proportional to the weights, so they need not sum to 100.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixSchedule {
    pub stage1: [f64; 4],
    pub stage2: [f64; 4],
}

impl Default for MixSchedule {
    fn default() -> Self {
        MixSchedule { stage1: [30.0, 30.0, 20.0, 20.0], stage2: [21.0, 21.0, 63.0, 5.0] }
    }
}

impl MixSchedule {
    pub fn weights(&self, stage: Stage) -> [f64; 4] {
        match stage {
            Stage::One => self.stage1,
            Stage::Two => self.stage2,
        }
    }

    /// Drops one task from both stages; the rest keep their relative proportions.
    pub fn without(mut self, task: TaskKind) -> Self {
        self.stage1[task.mix_index()] = 0.0;
        self.stage2[task.mix_index()] = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), InstructError> {
        for (s, w) in [(1, self.stage1), (2, self.stage2)] {
            if w.iter().any(|&x| !(x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(InstructError::Config(format!("stage {s} proportions must be nonnegative and not all zero")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudySource {
    pub record: StudyRecord,
    pub tokens: ImageTokens,
}

/// Seeded source of prompt records. Batch `b` depends only on `(seed, b)`,
/// so a step counter is all the cursor state a resume needs.
#[derive(Clone, Debug)]
pub struct MixStream {
    studies: Vec<StudySource>,
    nl_if: Vec<NlIfPair>,
    cumulative: [f64; 4],
    stage: Stage,
    seed: u64,
}

impl MixStream {
    pub fn new(
        studies: &[StudySource],
        nl_if: &[NlIfPair],
        schedule: &MixSchedule,
        stage: Stage,
        seed: u64,
    ) -> Result<MixStream, InstructError> {
        schedule.validate()?;
        let pool: Vec<StudySource> = match stage {
            Stage::One => studies.to_vec(),
            Stage::Two => studies.iter().filter(|s| s.record.view == View::Frontal).cloned().collect(),
        };
        let w = schedule.weights(stage);
        let total: f64 = w.iter().sum();
        let mut cumulative = [0.0; 4];
        let mut acc = 0.0;
        for i in 0..4 {
            acc += w[i] / total;
            cumulative[i] = acc;
        }
        cumulative[3] = 1.0;
        let needs_studies = w[..3].iter().any(|&x| x > 0.0);
        if needs_studies && pool.is_empty() {
            return Err(InstructError::EmptyPool(format!("no studies available for stage {}", stage.number())));
        }
        if w[3] > 0.0 && nl_if.is_empty() {
            return Err(InstructError::EmptyPool("no text-only pairs".into()));
        }
        Ok(MixStream { studies: pool, nl_if: nl_if.to_vec(), cumulative, stage, seed })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn pool_size(&self) -> usize {
        self.studies.len()
    }

    pub fn draw_kind(&self, rng: &mut Rng) -> TaskKind {
        let u: f64 = rng.random_range(0.0..1.0);
        let i = self.cumulative.iter().position(|&c| u < c).unwrap_or(3);
        TaskKind::MIX_ORDER[i]
    }

    fn style(&self, rng: &mut Rng) -> ReportStyle {
        match self.stage {
            Stage::Two => ReportStyle::Concise,
            Stage::One => {
                if rng.random_bool(0.5) {
                    ReportStyle::Verbose
                } else {
                    ReportStyle::Concise
                }
            }
        }
    }

    pub fn draw(&self, rng: &mut Rng) -> PromptRecord {
        let kind = self.draw_kind(rng);
        if kind == TaskKind::NlIf {
            return self.nl_if[rng.random_range(0..self.nl_if.len())].record();
        }
        let s = &self.studies[rng.random_range(0..self.studies.len())];
        match kind {
            TaskKind::CxrToReport => {
                let style = self.style(rng);
                c2r_record(&s.record, &s.tokens, style, pick_instruction(kind, rng).expect("has list"))
            }
            TaskKind::ReportToCxr => {
                let style = self.style(rng);
                r2c_record(&s.record, &s.tokens, style, pick_instruction(kind, rng).expect("has list"))
            }
            _ => vqa_record(&s.record, &s.tokens, rng.random_range(0..s.record.vqa.len())),
        }
    }

    /// Batch number `index`.
    pub fn batch(&self, index: u64, size: usize) -> Vec<PromptRecord> {
        let mut rng = stream_rng(self.seed, "mix-batch", index);
        (0..size).map(|_| self.draw(&mut rng)).collect()
    }
}
