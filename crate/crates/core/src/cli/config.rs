//! Line-oriented `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::instructset::{MixSchedule, Objective};
use crate::lmcore::{Constraint, LmConfig, SampleMode, SamplerConfig};
use crate::trainer::{Toggles, TrainConfig};
use crate::vqtok::{ProbeTrainConfig, VqConfig, VqTrainConfig};

pub const SEED_ENV: &str = "MMVQ_SEED";
pub const RESOLVED_FILE: &str = "resolved.cfg";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus_n: usize,
    pub corpus_test_fraction: f64,
    pub probe_epochs: usize,
    pub probe_batch: usize,
    pub probe_lr: f64,
    pub probe_min_train_records: usize,
    pub vq_epochs: usize,
    pub vq_batch: usize,
    pub vq_lr: f64,
    pub vq_k_img: usize,
    pub vq_n_z: usize,
    pub vq_beta: f64,
    pub vq_cip: bool,
    pub vq_cip_weight: f64,
    pub lm_d_model: usize,
    pub lm_layers: usize,
    pub lm_heads: usize,
    pub lm_d_ff: usize,
    pub lm_context: usize,
    pub train_lr: f64,
    pub train_batch: usize,
    pub train_stage1_epochs: f64,
    pub train_stage2_epochs: f64,
    pub train_objective: Objective,
    pub train_include_vqa: bool,
    pub train_run_stage1: bool,
    pub train_warmup: u64,
    pub train_weight_decay: f64,
    pub train_eval_every: u64,
    pub mix_stage1: [f64; 4],
    pub mix_stage2: [f64; 4],
    pub nlif_per_study: usize,
    pub eval_max_studies: usize,
    pub eval_sampler: SampleMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mix = MixSchedule::default();
        RunConfig {
            seed: 0,
            corpus_n: 4000,
            corpus_test_fraction: 0.2,
            probe_epochs: 8,
            probe_batch: 32,
            probe_lr: 2e-3,
            probe_min_train_records: 500,
            vq_epochs: 16,
            vq_batch: 32,
            vq_lr: 1e-3,
            vq_k_img: 128,
            vq_n_z: 32,
            vq_beta: 0.25,
            vq_cip: true,
            vq_cip_weight: 100.0,
            lm_d_model: 128,
            lm_layers: 4,
            lm_heads: 4,
            lm_d_ff: 512,
            lm_context: 320,
            train_lr: 1e-3,
            train_batch: 16,
            train_stage1_epochs: 8.0,
            train_stage2_epochs: 3.0,
            train_objective: Objective::Instruct,
            train_include_vqa: true,
            train_run_stage1: true,
            train_warmup: 100,
            train_weight_decay: 0.0,
            train_eval_every: 0,
            mix_stage1: mix.stage1,
            mix_stage2: mix.stage2,
            nlif_per_study: 1,
            eval_max_studies: 0,
            eval_sampler: SampleMode::Greedy,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, PipelineError> {
    v.parse().map_err(|_| PipelineError::Usage(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, PipelineError> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(PipelineError::Usage(format!("{key}: expected true/false, got {v:?}"))),
    }
}

fn parse_mix(key: &str, v: &str) -> Result<[f64; 4], PipelineError> {
    let parts: Vec<f64> = v.split(',').map(|p| parse_num(key, p.trim())).collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| PipelineError::Usage(format!("{key}: expected four comma-separated weights")))
}

fn parse_sampler(key: &str, v: &str) -> Result<SampleMode, PipelineError> {
    let parts: Vec<&str> = v.split(':').collect();
    match parts.as_slice() {
        ["greedy"] => Ok(SampleMode::Greedy),
        ["temperature", t] => Ok(SampleMode::Temperature { temperature: parse_num(key, t)? }),
        ["top_k", k, t] => Ok(SampleMode::TopK { k: parse_num(key, k)?, temperature: parse_num(key, t)? }),
        _ => Err(PipelineError::Usage(format!("{key}: expected greedy, temperature:T or top_k:K:T"))),
    }
}

fn sampler_string(m: SampleMode) -> String {
    match m {
        SampleMode::Greedy => "greedy".into(),
        SampleMode::Temperature { temperature } => format!("temperature:{temperature}"),
        SampleMode::TopK { k, temperature } => format!("top_k:{k}:{temperature}"),
    }
}

fn mix_string(w: [f64; 4]) -> String {
    w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Defaults, with the seed taken from `MMVQ_SEED` when set.
    pub fn from_env() -> Result<Self, PipelineError> {
        let mut c = RunConfig::default();
        if let Ok(s) = std::env::var(SEED_ENV) {
            c.set("seed", s.trim())?;
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), PipelineError> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "corpus.n" => self.corpus_n = parse_num(key, v)?,
            "corpus.test_fraction" => self.corpus_test_fraction = parse_num(key, v)?,
            "probe.epochs" => self.probe_epochs = parse_num(key, v)?,
            "probe.batch" => self.probe_batch = parse_num(key, v)?,
            "probe.lr" => self.probe_lr = parse_num(key, v)?,
            "probe.min_train_records" => self.probe_min_train_records = parse_num(key, v)?,
            "vq.epochs" => self.vq_epochs = parse_num(key, v)?,
            "vq.batch" => self.vq_batch = parse_num(key, v)?,
            "vq.lr" => self.vq_lr = parse_num(key, v)?,
            "vq.k_img" => self.vq_k_img = parse_num(key, v)?,
            "vq.n_z" => self.vq_n_z = parse_num(key, v)?,
            "vq.beta" => self.vq_beta = parse_num(key, v)?,
            "vq.cip" => self.vq_cip = parse_bool(key, v)?,
            "vq.cip_weight" => self.vq_cip_weight = parse_num(key, v)?,
            "lm.d_model" => self.lm_d_model = parse_num(key, v)?,
            "lm.layers" => self.lm_layers = parse_num(key, v)?,
            "lm.heads" => self.lm_heads = parse_num(key, v)?,
            "lm.d_ff" => self.lm_d_ff = parse_num(key, v)?,
            "lm.context" => self.lm_context = parse_num(key, v)?,
            "train.lr" => self.train_lr = parse_num(key, v)?,
            "train.batch" => self.train_batch = parse_num(key, v)?,
            "train.stage1_epochs" => self.train_stage1_epochs = parse_num(key, v)?,
            "train.stage2_epochs" => self.train_stage2_epochs = parse_num(key, v)?,
            "train.objective" => {
                self.train_objective = match v {
                    "instruct" => Objective::Instruct,
                    "joint" => Objective::Joint,
                    _ => return Err(PipelineError::Usage(format!("{key}: expected instruct or joint"))),
                }
            }
            "train.include_vqa" => self.train_include_vqa = parse_bool(key, v)?,
            "train.run_stage1" => self.train_run_stage1 = parse_bool(key, v)?,
            "train.warmup" => self.train_warmup = parse_num(key, v)?,
            "train.weight_decay" => self.train_weight_decay = parse_num(key, v)?,
            "train.eval_every" => self.train_eval_every = parse_num(key, v)?,
            "mix.stage1" => self.mix_stage1 = parse_mix(key, v)?,
            "mix.stage2" => self.mix_stage2 = parse_mix(key, v)?,
            "nlif.per_study" => self.nlif_per_study = parse_num(key, v)?,
            "eval.max_studies" => self.eval_max_studies = parse_num(key, v)?,
            "eval.sampler" => self.eval_sampler = parse_sampler(key, v)?,
            _ => return Err(PipelineError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), PipelineError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Usage(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        self.apply_text(&text)
    }

    /// `key=value` override as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), PipelineError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| PipelineError::Usage(format!("--set expects key=value, got {kv:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("corpus.n", self.corpus_n.to_string()),
            ("corpus.test_fraction", self.corpus_test_fraction.to_string()),
            ("eval.max_studies", self.eval_max_studies.to_string()),
            ("eval.sampler", sampler_string(self.eval_sampler)),
            ("lm.context", self.lm_context.to_string()),
            ("lm.d_ff", self.lm_d_ff.to_string()),
            ("lm.d_model", self.lm_d_model.to_string()),
            ("lm.heads", self.lm_heads.to_string()),
            ("lm.layers", self.lm_layers.to_string()),
            ("mix.stage1", mix_string(self.mix_stage1)),
            ("mix.stage2", mix_string(self.mix_stage2)),
            ("nlif.per_study", self.nlif_per_study.to_string()),
            ("probe.batch", self.probe_batch.to_string()),
            ("probe.epochs", self.probe_epochs.to_string()),
            ("probe.lr", self.probe_lr.to_string()),
            ("probe.min_train_records", self.probe_min_train_records.to_string()),
            ("seed", self.seed.to_string()),
            ("train.batch", self.train_batch.to_string()),
            ("train.eval_every", self.train_eval_every.to_string()),
            ("train.include_vqa", self.train_include_vqa.to_string()),
            ("train.lr", self.train_lr.to_string()),
            ("train.objective", self.train_objective.name().to_string()),
            ("train.run_stage1", self.train_run_stage1.to_string()),
            ("train.stage1_epochs", self.train_stage1_epochs.to_string()),
            ("train.stage2_epochs", self.train_stage2_epochs.to_string()),
            ("train.warmup", self.train_warmup.to_string()),
            ("train.weight_decay", self.train_weight_decay.to_string()),
            ("vq.batch", self.vq_batch.to_string()),
            ("vq.beta", self.vq_beta.to_string()),
            ("vq.cip", self.vq_cip.to_string()),
            ("vq.cip_weight", self.vq_cip_weight.to_string()),
            ("vq.epochs", self.vq_epochs.to_string()),
            ("vq.k_img", self.vq_k_img.to_string()),
            ("vq.lr", self.vq_lr.to_string()),
            ("vq.n_z", self.vq_n_z.to_string()),
        ]
    }

    /// Sorted `key = value` lines; parsing them back yields the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            writeln!(s, "{k} = {v}").expect("string write");
        }
        s
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let p = dir.join(RESOLVED_FILE);
        std::fs::write(&p, self.to_text()).map_err(|e| PipelineError::io(&p, e))
    }

    pub fn probe_config(&self) -> ProbeTrainConfig {
        ProbeTrainConfig {
            epochs: self.probe_epochs,
            batch_size: self.probe_batch,
            lr: self.probe_lr,
            seed: self.seed,
            min_train_records: self.probe_min_train_records,
            ..ProbeTrainConfig::default()
        }
    }

    pub fn vq_config(&self) -> VqTrainConfig {
        VqTrainConfig {
            model: VqConfig {
                k_img: self.vq_k_img,
                n_z: self.vq_n_z,
                beta: self.vq_beta,
                cip_weight: self.vq_cip_weight,
                ..VqConfig::default()
            },
            epochs: self.vq_epochs,
            batch_size: self.vq_batch,
            lr: self.vq_lr,
            seed: self.seed,
            cip: self.vq_cip,
            ..VqTrainConfig::default()
        }
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            d_model: self.lm_d_model,
            n_layers: self.lm_layers,
            n_heads: self.lm_heads,
            d_ff: self.lm_d_ff,
            context: self.lm_context,
            ..LmConfig::default()
        }
    }

    pub fn mix(&self) -> MixSchedule {
        MixSchedule { stage1: self.mix_stage1, stage2: self.mix_stage2 }
    }

    pub fn toggles(&self) -> Toggles {
        Toggles { cip_used_tokenizer: self.vq_cip, include_vqa: self.train_include_vqa, ran_stage1: self.train_run_stage1 }
    }

    /// Trainer settings for a stage; `steps` is filled in from the pool size.
    pub fn train_config(&self, stage: crate::instructset::Stage, steps: u64) -> TrainConfig {
        TrainConfig {
            lr: self.train_lr,
            batch_size: self.train_batch,
            objective: self.train_objective,
            toggles: self.toggles(),
            warmup: self.train_warmup,
            weight_decay: self.train_weight_decay,
            eval_every: self.train_eval_every,
            ..TrainConfig::desk(stage, steps, self.seed)
        }
    }

    pub fn sampler(&self, max_new_tokens: usize, constraint: Constraint) -> SamplerConfig {
        SamplerConfig { mode: self.eval_sampler, max_new_tokens, constraint }
    }
}
