//! Two-stage fine-tuning over the mixed instruction stream, with exact resume.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::instructset::{batch_loss, build_example, InstructError, MixStream, Objective, Stage, TaskKind, TokenizedExample};
use crate::lmcore::{LmError, TransformerLM, LM_MAGIC};
use crate::numcore::optim::clip_grad_norm;
use crate::numcore::{AdamWConfig, AdamWState, Graph, NumError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step} (studies {study_ids:?})")]
    NonFinite { step: u64, study_ids: Vec<String> },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Instruct(#[from] InstructError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Switches that define the ablation rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub cip_used_tokenizer: bool,
    pub include_vqa: bool,
    pub ran_stage1: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles { cip_used_tokenizer: true, include_vqa: true, ran_stage1: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub objective: Objective,
    pub toggles: Toggles,
    pub seed: u64,
    pub clip_norm: f64,
    pub weight_decay: f64,
    /// Linear warmup length in steps; 0 disables it.
    pub warmup: u64,
    /// Validation every this many steps (0: only at start and end).
    pub eval_every: u64,
    /// Intermediate checkpoints every this many steps (0: only at the end).
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub const PAPER_LR: f64 = 5e-6;

    pub fn desk(stage: Stage, steps: u64, seed: u64) -> Self {
        TrainConfig {
            stage,
            lr: 3e-4,
            batch_size: 16,
            steps,
            objective: Objective::Instruct,
            toggles: Toggles::default(),
            seed,
            clip_norm: 1.0,
            weight_decay: 0.0,
            warmup: 0,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }

    /// Steps that cover `epochs` passes over `pool` examples.
    pub fn steps_for(epochs: f64, pool: usize, batch_size: usize) -> u64 {
        ((epochs * pool as f64) / batch_size as f64).ceil().max(1.0) as u64
    }

    fn adam(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }

    fn lr_at(&self, step: u64) -> f64 {
        if self.warmup == 0 || step >= self.warmup {
            self.lr
        } else {
            self.lr * (step + 1) as f64 / self.warmup as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: u64,
    /// A task name, or "all" for the whole batch.
    pub task: String,
    pub loss_mean: f64,
    pub loss_sum: f64,
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRow {
    pub step: u64,
    pub task: String,
    pub loss_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRow>,
    pub validation: Vec<ValRow>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| TrainError::Io(std::io::Error::other(e)))?;
        for r in &self.steps {
            w.serialize(r).map_err(|e| TrainError::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_validation_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| TrainError::Io(std::io::Error::other(e)))?;
        for r in &self.validation {
            w.serialize(r).map_err(|e| TrainError::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Validation loss per task at the first and last evaluated step.
    pub fn validation_span(&self) -> BTreeMap<String, (f64, f64)> {
        let mut out: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        for r in &self.validation {
            out.entry(r.task.clone()).and_modify(|e| e.1 = r.loss_mean).or_insert((r.loss_mean, r.loss_mean));
        }
        out
    }
}

/// Mean instruct loss per task on a fixed example set.
pub fn validation_losses(model: &TransformerLM<f32>, examples: &[TokenizedExample]) -> Result<BTreeMap<TaskKind, f64>, LmError> {
    let mut acc: BTreeMap<TaskKind, (f64, usize)> = BTreeMap::new();
    for chunk in examples.chunks(16) {
        let refs: Vec<&TokenizedExample> = chunk.iter().collect();
        let mut g = Graph::with_params(&model.params);
        let b = batch_loss(&mut g, model, &refs, Objective::Instruct)?;
        for (ex, &(s, c)) in chunk.iter().zip(&b.per_example) {
            let e = acc.entry(ex.task).or_default();
            e.0 += s;
            e.1 += c;
        }
    }
    Ok(acc.into_iter().map(|(k, (s, c))| (k, s / c.max(1) as f64)).collect())
}

#[derive(Serialize, Deserialize)]
struct TrainerMeta {
    config: TrainConfig,
    step: u64,
}

/// Model, optimizer and step cursor.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: TransformerLM<f32>,
    pub opt: AdamWState<f32>,
    pub step: u64,
    pub cfg: TrainConfig,
    pub log: TrainLog,
}

impl Trainer {
    pub fn new(model: TransformerLM<f32>, cfg: TrainConfig) -> Result<Trainer, TrainError> {
        if model.vocab.k_img == 0 {
            return Err(TrainError::Config("vocabulary must be expanded before instruction tuning".into()));
        }
        if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
            return Err(TrainError::Config("batch_size and lr must be positive".into()));
        }
        let opt = AdamWState::new(&model.params, cfg.adam());
        Ok(Trainer { model, opt, step: 0, cfg, log: TrainLog::default() })
    }

    pub fn batch_examples(&self, stream: &MixStream, step: u64) -> Result<Vec<TokenizedExample>, TrainError> {
        stream
            .batch(step, self.cfg.batch_size)
            .iter()
            .map(|r| build_example(r, &self.model.vocab, self.model.cfg.context).map_err(TrainError::from))
            .collect()
    }

    /// One optimizer step on batch number `self.step`.
    pub fn step_once(&mut self, stream: &MixStream) -> Result<(), TrainError> {
        let examples = self.batch_examples(stream, self.step)?;
        let refs: Vec<&TokenizedExample> = examples.iter().collect();
        let (loss_sum, count, per_example, grads) = {
            let mut g = Graph::with_params(&self.model.params);
            let b = batch_loss(&mut g, &self.model, &refs, self.cfg.objective)?;
            if !b.sum.is_finite() {
                return Err(TrainError::NonFinite {
                    step: self.step,
                    study_ids: examples.iter().filter_map(|e| e.study_id.clone()).collect(),
                });
            }
            let grads = g.backward(b.mean);
            (b.sum, b.count, b.per_example, grads)
        };
        self.model.params.zero_grad();
        self.model.params.accumulate(&grads);
        clip_grad_norm(&mut self.model.params, self.cfg.clip_norm);
        self.opt.hyper.lr = self.cfg.lr_at(self.step);
        self.opt.step(&mut self.model.params)?;

        let mut by_task: BTreeMap<TaskKind, (f64, usize)> = BTreeMap::new();
        for (ex, &(s, c)) in examples.iter().zip(&per_example) {
            let e = by_task.entry(ex.task).or_default();
            e.0 += s;
            e.1 += c;
        }
        let row = |task: &str, s: f64, c: usize| StepRow {
            step: self.step,
            task: task.to_string(),
            loss_mean: s / c.max(1) as f64,
            loss_sum: s,
            tokens: c,
        };
        let mut rows = vec![row("all", loss_sum, count)];
        rows.extend(by_task.iter().map(|(k, &(s, c))| row(k.name(), s, c)));
        self.log.steps.extend(rows);
        self.step += 1;
        Ok(())
    }

    pub fn validate(&mut self, val: &[TokenizedExample]) -> Result<(), TrainError> {
        if val.is_empty() {
            return Ok(());
        }
        for (k, loss) in validation_losses(&self.model, val)? {
            self.log.validation.push(ValRow { step: self.step, task: k.name().to_string(), loss_mean: loss });
        }
        Ok(())
    }

    /// Trains until `cfg.steps`, validating and checkpointing as configured.
    pub fn run(&mut self, stream: &MixStream, val: &[TokenizedExample], ckpt_dir: Option<&Path>) -> Result<(), TrainError> {
        if stream.stage() != self.cfg.stage {
            return Err(TrainError::Config("stream stage does not match the training config".into()));
        }
        if self.step == 0 {
            self.validate(val)?;
        }
        let started = std::time::Instant::now();
        while self.step < self.cfg.steps {
            self.step_once(stream)?;
            if self.step % 50 == 0 || self.step == self.cfg.steps {
                let last = self.log.steps.iter().rev().find(|r| r.task == "all").expect("logged");
                log::info!(
                    "stage {} step {}/{} loss {:.4} ({:.1}s)",
                    self.cfg.stage.number(),
                    self.step,
                    self.cfg.steps,
                    last.loss_mean,
                    started.elapsed().as_secs_f64()
                );
            }
            if self.cfg.eval_every > 0 && self.step % self.cfg.eval_every == 0 && self.step < self.cfg.steps {
                self.validate(val)?;
            }
            if let Some(dir) = ckpt_dir {
                if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 && self.step < self.cfg.steps {
                    self.save(&dir.join(format!("step{:06}.ckpt", self.step)))?;
                }
            }
        }
        self.validate(val)?;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = TrainerMeta { config: self.cfg.clone(), step: self.step };
        let mut ck = self.model.to_checkpoint(serde_json::to_value(meta).expect("serializable"));
        ck.push_adam(&self.opt, &self.model.params);
        ck
    }

    /// Writes model, optimizer moments and step cursor; returns the content hash.
    pub fn save(&self, path: &Path) -> Result<String, TrainError> {
        Ok(self.to_checkpoint().save(path, LM_MAGIC)?)
    }

    pub fn load(path: &Path) -> Result<Trainer, TrainError> {
        let ck = Checkpoint::load(path, LM_MAGIC)?;
        let (model, extra) = TransformerLM::from_checkpoint(&ck)?;
        let meta: TrainerMeta = serde_json::from_value(extra).map_err(|e| TrainError::Config(format!("trainer metadata: {e}")))?;
        let opt = ck.load_adam(&model.params, meta.config.adam(), meta.step)?;
        Ok(Trainer { model, opt, step: meta.step, cfg: meta.config, log: TrainLog::default() })
    }
}

/// Runs one stage from scratch and returns the tuned model, its log and the trainer.
pub fn train_stage(
    model: TransformerLM<f32>,
    stream: &MixStream,
    cfg: TrainConfig,
    val: &[TokenizedExample],
    ckpt_dir: Option<&Path>,
) -> Result<Trainer, TrainError> {
    let mut t = Trainer::new(model, cfg)?;
    t.run(stream, val, ckpt_dir)?;
    if let Some(dir) = ckpt_dir {
        t.save(&dir.join("final.ckpt"))?;
        t.log.write_csv(&dir.join("train_log.csv"))?;
        t.log.write_validation_csv(&dir.join("val_log.csv"))?;
        let mut f = std::fs::File::create(dir.join("train_config.json"))?;
        f.write_all(serde_json::to_string_pretty(&t.cfg).expect("serializable").as_bytes())?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests;
