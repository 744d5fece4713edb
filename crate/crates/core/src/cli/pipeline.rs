//! Artifact layout and the end-to-end stages behind the operator commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::PipelineError;
use crate::evalsuite::{
    self, finding_labels, fid, image_metrics, majority_answers, report_metrics, vqa_accuracy, MetricsReport,
};
use crate::instructset::{
    self, build_example, build_text_vocab, nl_if_pairs, prompt_ids, tasks, MixStream, Stage, StudySource, TaskKind,
    TokenizedExample, C2R_INSTRUCTIONS, R2C_INSTRUCTIONS,
};
use crate::lmcore::{split_words, Constraint, TransformerLM};
use crate::numcore::rng::{derive_seed, stream_rng};
use crate::synthcorpus::{build_corpus, write_image, write_pgm, Corpus, Image, Kind, ReportStyle, Split, StudyRecord, View};
use crate::trainer::{train_stage, TrainConfig, Trainer};
use crate::vqtok::{probe_auroc, train_probe, train_vq, ImageTokens, ProbeModel, VqModel};

pub const CORPUS_DIR: &str = "corpus";
pub const PROBE_FILE: &str = "probe/probe.ckpt";
pub const VQ_FILE: &str = "vq/vq.ckpt";
pub const TOKENS_FILE: &str = "vq/tokens.json";
pub const EVAL_DIR: &str = "eval";

/// Max new tokens for report and answer generation.
pub const MAX_REPORT_TOKENS: usize = 160;
pub const MAX_ANSWER_TOKENS: usize = 32;

/// A run directory. Corpus, probe and tokenizer artifacts missing from
/// `root` are looked up in `shared` (used by ablation rows).
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
    pub shared: Option<PathBuf>,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into(), shared: None }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("lm/stage{}", stage.number()))
    }

    fn find(&self, rel: &str, what: &'static str, producer: &'static str, shareable: bool) -> Result<PathBuf, PipelineError> {
        let own = self.root.join(rel);
        if own.exists() {
            return Ok(own);
        }
        if shareable {
            if let Some(s) = &self.shared {
                let p = s.join(rel);
                if p.exists() {
                    return Ok(p);
                }
            }
        }
        Err(PipelineError::MissingArtifact { what, path: own, producer })
    }

    pub fn corpus_dir(&self) -> Result<PathBuf, PipelineError> {
        let manifest = format!("{CORPUS_DIR}/{}", crate::synthcorpus::corpus::MANIFEST_FILE);
        self.find(&manifest, "corpus", "mmvq corpus", true).map(|p| p.parent().expect("manifest has a parent").to_path_buf())
    }

    pub fn probe_path(&self) -> Result<PathBuf, PipelineError> {
        self.find(PROBE_FILE, "probe classifier", "mmvq train-probe", true)
    }

    pub fn vq_path(&self) -> Result<PathBuf, PipelineError> {
        self.find(VQ_FILE, "image tokenizer", "mmvq train-vq", true)
    }

    fn tokens_path(&self) -> Result<PathBuf, PipelineError> {
        // Tokens always live next to the tokenizer that produced them.
        let vq = self.vq_path()?;
        Ok(vq.parent().expect("file in dir").join("tokens.json"))
    }

    pub fn stage_checkpoint(&self, stage: Stage) -> Result<PathBuf, PipelineError> {
        let rel = format!("lm/stage{}/final.ckpt", stage.number());
        let producer = match stage {
            Stage::One => "mmvq train-lm --stage 1",
            Stage::Two => "mmvq train-lm --stage 2",
        };
        self.find(&rel, "language model checkpoint", producer, false)
    }
}

pub fn corpus_step(cfg: &RunConfig, ws: &Workspace) -> Result<Corpus, PipelineError> {
    let dir = ws.path(CORPUS_DIR);
    let c = build_corpus(cfg.corpus_n, cfg.corpus_test_fraction, cfg.seed, Some(&dir))?;
    cfg.write_resolved(&dir)?;
    Ok(c)
}

pub fn load_corpus(ws: &Workspace) -> Result<Corpus, PipelineError> {
    Ok(Corpus::load(&ws.corpus_dir()?)?)
}

pub fn probe_step(cfg: &RunConfig, ws: &Workspace) -> Result<ProbeModel<f32>, PipelineError> {
    let corpus = load_corpus(ws)?;
    let (probe, report) = train_probe(&corpus, &cfg.probe_config())?;
    let path = ws.path(PROBE_FILE);
    let dir = path.parent().expect("file in dir");
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    probe.save(&path, cfg.seed)?;
    write_json(&dir.join("report.json"), &report)?;
    cfg.write_resolved(dir)?;
    Ok(probe)
}

pub fn load_probe(ws: &Workspace) -> Result<ProbeModel<f32>, PipelineError> {
    Ok(ProbeModel::load(&ws.probe_path()?)?)
}

/// Probe AUROC on original vs reconstructed test images, per kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconRow {
    pub kind: String,
    pub original: f64,
    pub reconstructed: f64,
    pub ratio: f64,
}

pub fn recon_auroc(corpus: &Corpus, vq: &VqModel<f32>, probe: &ProbeModel<f32>) -> Result<Vec<ReconRow>, PipelineError> {
    let test: Vec<&StudyRecord> = corpus.test().collect();
    let imgs: Vec<&Image> = test.iter().map(|r| &r.image).collect();
    let kinds: Vec<Vec<Kind>> = test.iter().map(|r| r.findings.iter().map(|f| f.kind).collect()).collect();
    let recon = vq.reconstruct(&imgs)?;
    let recon_refs: Vec<&Image> = recon.iter().collect();
    let orig = probe_auroc(probe, &imgs, &kinds);
    let rec: BTreeMap<String, f64> = probe_auroc(probe, &recon_refs, &kinds).into_iter().collect();
    Ok(orig
        .into_iter()
        .map(|(k, o)| {
            let r = rec.get(&k).copied().unwrap_or(f64::NAN);
            ReconRow { kind: k, original: o, reconstructed: r, ratio: r / o }
        })
        .collect())
}

pub fn vq_step(cfg: &RunConfig, ws: &Workspace) -> Result<VqModel<f32>, PipelineError> {
    let corpus = load_corpus(ws)?;
    let probe = match ws.probe_path() {
        Ok(p) => Some(ProbeModel::load(&p)?),
        Err(e) if cfg.vq_cip => return Err(e),
        Err(_) => None,
    };
    let vcfg = cfg.vq_config();
    let (vq, log) = train_vq(&corpus, &vcfg, probe.as_ref())?;
    let path = ws.path(VQ_FILE);
    let dir = path.parent().expect("file in dir");
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    vq.save(&path, cfg.seed, probe.as_ref().map(|p| p.hash()), cfg.vq_cip)?;
    write_json(&dir.join("train_log.json"), &log)?;
    let imgs: Vec<&Image> = corpus.records.iter().map(|r| &r.image).collect();
    let toks = vq.encode(&imgs)?;
    let map: BTreeMap<String, ImageTokens> = corpus.records.iter().map(|r| r.study_id.clone()).zip(toks).collect();
    write_json(&dir.join("tokens.json"), &map)?;
    if let Some(p) = &probe {
        write_json(&dir.join("recon_auroc.json"), &recon_auroc(&corpus, &vq, p)?)?;
    }
    cfg.write_resolved(dir)?;
    Ok(vq)
}

pub fn load_vq(ws: &Workspace) -> Result<VqModel<f32>, PipelineError> {
    Ok(VqModel::load(&ws.vq_path()?)?.0)
}

pub fn load_tokens(ws: &Workspace) -> Result<BTreeMap<String, ImageTokens>, PipelineError> {
    read_json(&ws.tokens_path()?)
}

fn sources(corpus: &Corpus, tokens: &BTreeMap<String, ImageTokens>, split: Split) -> Result<Vec<StudySource>, PipelineError> {
    corpus
        .split(split)
        .map(|r| {
            let t = tokens
                .get(&r.study_id)
                .ok_or_else(|| PipelineError::Config(format!("no image tokens for study {}", r.study_id)))?;
            Ok(StudySource { record: r.clone(), tokens: t.clone() })
        })
        .collect()
}

/// Fresh text model with the image rows appended.
pub fn init_lm(cfg: &RunConfig, k_img: usize) -> Result<TransformerLM<f32>, PipelineError> {
    let mut m = TransformerLM::<f32>::new(cfg.lm_config(), build_text_vocab(), derive_seed(cfg.seed, "lm-init", 0));
    m.expand_vocab(k_img, derive_seed(cfg.seed, "lm-expand", 0))?;
    Ok(m)
}

pub fn lm_step(cfg: &RunConfig, ws: &Workspace, stage: Stage) -> Result<Trainer, PipelineError> {
    if stage == Stage::One && !cfg.train_run_stage1 {
        return Err(PipelineError::Usage("stage 1 is disabled (train.run_stage1 = false)".into()));
    }
    let corpus = load_corpus(ws)?;
    let vq = load_vq(ws)?;
    let tokens = load_tokens(ws)?;
    let train = sources(&corpus, &tokens, Split::Train)?;
    let test = sources(&corpus, &tokens, Split::Test)?;
    let nl = nl_if_pairs(corpus.train(), cfg.nlif_per_study, derive_seed(cfg.seed, "nl-if", 0));
    let nl_val = nl_if_pairs(corpus.test(), 1, derive_seed(cfg.seed, "nl-if-val", 0));
    let mut schedule = cfg.mix();
    if !cfg.train_include_vqa {
        schedule = schedule.without(TaskKind::CxrVqa);
    }
    let stream = MixStream::new(&train, &nl, &schedule, stage, derive_seed(cfg.seed, "mix", stage.number() as u64))?;
    let val_stream = MixStream::new(&test, &nl_val, &schedule, stage, derive_seed(cfg.seed, "val", stage.number() as u64))?;
    let model = match stage {
        Stage::Two if cfg.train_run_stage1 => Trainer::load(&ws.stage_checkpoint(Stage::One)?)?.model,
        _ => init_lm(cfg, vq.cfg.k_img)?,
    };
    let val: Vec<TokenizedExample> = val_stream
        .batch(0, 64)
        .iter()
        .map(|r| build_example(r, &model.vocab, model.cfg.context))
        .collect::<Result<_, _>>()?;
    let epochs = match stage {
        Stage::One => cfg.train_stage1_epochs,
        Stage::Two => cfg.train_stage2_epochs,
    };
    let steps = TrainConfig::steps_for(epochs, stream.pool_size(), cfg.train_batch);
    log::info!("stage {}: {} steps over a pool of {} studies", stage.number(), steps, stream.pool_size());
    let dir = ws.stage_dir(stage);
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    cfg.write_resolved(&dir)?;
    Ok(train_stage(model, &stream, cfg.train_config(stage, steps), &val, Some(&dir))?)
}

pub fn load_lm(ws: &Workspace) -> Result<TransformerLM<f32>, PipelineError> {
    Ok(Trainer::load(&ws.stage_checkpoint(Stage::Two)?)?.model)
}

fn sample_text(lm: &TransformerLM<f32>, rec: &instructset::PromptRecord, cfg: &RunConfig, max: usize, seed: u64) -> Result<String, PipelineError> {
    let ids = prompt_ids(rec, &lm.vocab)?;
    let g = lm.sample(&ids, &cfg.sampler(max, Constraint::TextOnly), seed)?;
    Ok(lm.vocab.decode(&g.ids).trim().to_string())
}

/// Report text for an image given as tokens.
pub fn generate_report(lm: &TransformerLM<f32>, tokens: &ImageTokens, cfg: &RunConfig, seed: u64) -> Result<String, PipelineError> {
    let rec = instructset::PromptRecord {
        task: TaskKind::CxrToReport,
        instruction: C2R_INSTRUCTIONS[0].to_string(),
        input: instructset::Content::Image(tokens.clone()),
        response: instructset::Content::Text(String::new()),
        source_study: None,
    };
    sample_text(lm, &rec, cfg, MAX_REPORT_TOKENS, seed)
}

/// Answer text for a question about an image given as tokens.
pub fn answer_question(lm: &TransformerLM<f32>, tokens: &ImageTokens, question: &str, cfg: &RunConfig, seed: u64) -> Result<String, PipelineError> {
    let rec = instructset::PromptRecord {
        task: TaskKind::CxrVqa,
        instruction: question.to_string(),
        input: instructset::Content::Image(tokens.clone()),
        response: instructset::Content::Text(String::new()),
        source_study: None,
    };
    sample_text(lm, &rec, cfg, MAX_ANSWER_TOKENS, seed)
}

/// Image tokens for a report, decoded under the image constraint.
pub fn generate_image_tokens(lm: &TransformerLM<f32>, report: &str, d_z: usize, cfg: &RunConfig, seed: u64) -> Result<ImageTokens, PipelineError> {
    let placeholder = ImageTokens(vec![0; d_z]);
    let rec = tasks::r2c_from_report(report, &placeholder, R2C_INSTRUCTIONS[0], None);
    let ids = prompt_ids(&rec, &lm.vocab)?;
    let g = lm.sample(&ids, &cfg.sampler(d_z + 3, Constraint::Image { d_z }), seed)?;
    Ok(lm.vocab.image_tokens_from_ids(&g.ids[1..1 + d_z])?)
}

pub fn generate_image(lm: &TransformerLM<f32>, vq: &VqModel<f32>, report: &str, cfg: &RunConfig, seed: u64) -> Result<Image, PipelineError> {
    let t = generate_image_tokens(lm, report, vq.cfg.d_z(), cfg, seed)?;
    Ok(vq.decode(&[t])?.remove(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Full,
    C2r,
    R2c,
    Vqa,
}

impl Suite {
    fn has(self, s: Suite) -> bool {
        self == Suite::Full || self == s
    }
}

/// Gate quantities and their baselines.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub studies: usize,
    pub recon: Vec<ReconRow>,
    pub c2r_micro_f1: f64,
    pub c2r_shuffled_micro_f1: f64,
    pub r2c_macro_auroc: f64,
    pub r2c_shuffled_macro_auroc: f64,
    pub vqa: f64,
    pub vqa_majority: f64,
    pub vqa_questions: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub metrics: MetricsReport,
    pub summary: EvalSummary,
}

/// Fixed-point-free permutation of `0..n` (identity when n < 2).
pub(crate) fn derangement(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, "derangement", 0));
    let mut p = vec![0; n];
    for j in 0..n {
        p[order[j]] = order[(j + 1) % n];
    }
    p
}

fn word_tokens(s: &str) -> Vec<String> {
    split_words(s).into_iter().map(str::to_string).collect()
}

/// Frontal test studies, capped at `eval.max_studies`.
pub fn eval_studies(corpus: &Corpus, cfg: &RunConfig) -> Vec<StudyRecord> {
    let mut v: Vec<StudyRecord> = corpus.test().filter(|r| r.view == View::Frontal).cloned().collect();
    if cfg.eval_max_studies > 0 {
        v.truncate(cfg.eval_max_studies);
    }
    v
}

pub fn evaluate(cfg: &RunConfig, ws: &Workspace, suite: Suite) -> Result<EvalOutcome, PipelineError> {
    let corpus = load_corpus(ws)?;
    let probe = load_probe(ws)?;
    let vq = load_vq(ws)?;
    let tokens = load_tokens(ws)?;
    let lm = load_lm(ws)?;
    let dir = ws.path(EVAL_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    cfg.write_resolved(&dir)?;
    let studies = eval_studies(&corpus, cfg);
    let n = studies.len();
    let tok = |r: &StudyRecord| tokens[&r.study_id].clone();
    let perm = derangement(n, derive_seed(cfg.seed, "eval-shuffle", 0));
    let mut out = EvalOutcome::default();
    out.summary.studies = n;
    out.summary.recon = recon_auroc(&corpus, &vq, &probe)?;

    if suite.has(Suite::C2r) {
        let mut generated = Vec::with_capacity(n);
        for (i, r) in studies.iter().enumerate() {
            generated.push(generate_report(&lm, &tok(r), cfg, derive_seed(cfg.seed, "eval-c2r", i as u64))?);
        }
        let refs: Vec<String> = studies.iter().map(|r| r.report(ReportStyle::Concise).to_string()).collect();
        out.metrics.report = report_metrics(&generated, &refs, word_tokens);
        let shuffled: Vec<String> = perm.iter().map(|&j| refs[j].clone()).collect();
        out.summary.c2r_micro_f1 = out.metrics.report.f1.micro;
        out.summary.c2r_shuffled_micro_f1 = report_metrics(&shuffled, &refs, word_tokens).f1.micro;
        let rows: Vec<serde_json::Value> = studies
            .iter()
            .zip(&generated)
            .zip(&refs)
            .map(|((r, g), rf)| serde_json::json!({ "study_id": r.study_id, "generated": g, "reference": rf }))
            .collect();
        write_jsonl(&dir.join("c2r.jsonl"), &rows)?;
        let ids: Vec<String> = studies.iter().map(|r| r.study_id.clone()).collect();
        let pred: Vec<_> = generated.iter().map(|t| evalsuite::extract_labels(t)).collect();
        let truth: Vec<_> = refs.iter().map(|t| evalsuite::extract_labels(t)).collect();
        evalsuite::write_label_dump(&dir.join("c2r_labels.jsonl"), &ids, &pred, &truth).map_err(|e| PipelineError::io(&dir, e))?;
    }

    if suite.has(Suite::R2c) {
        let img_dir = dir.join("images");
        std::fs::create_dir_all(&img_dir).map_err(|e| PipelineError::io(&img_dir, e))?;
        let truth: Vec<_> = studies.iter().map(|r| finding_labels(&r.findings)).collect();
        let mut gen_images = Vec::with_capacity(n);
        let mut shuf_images = Vec::with_capacity(n);
        for (i, r) in studies.iter().enumerate() {
            let img = generate_image(&lm, &vq, r.report(ReportStyle::Concise), cfg, derive_seed(cfg.seed, "eval-r2c", i as u64))?;
            write_image(&img_dir.join(format!("{}.f32", r.study_id)), &img)?;
            if i < 16 {
                write_pgm(&img_dir.join(format!("{}.pgm", r.study_id)), &img)?;
            }
            gen_images.push(img);
            let other = studies[perm[i]].report(ReportStyle::Concise);
            shuf_images.push(generate_image(&lm, &vq, other, cfg, derive_seed(cfg.seed, "eval-r2c-shuffled", i as u64))?);
        }
        let g_refs: Vec<&Image> = gen_images.iter().collect();
        let s_refs: Vec<&Image> = shuf_images.iter().collect();
        let real: Vec<&Image> = studies.iter().map(|r| &r.image).collect();
        out.metrics.image = image_metrics(&probe.logits(&g_refs), &truth);
        out.summary.r2c_macro_auroc = out.metrics.image.auroc.macro_;
        out.summary.r2c_shuffled_macro_auroc = image_metrics(&probe.logits(&s_refs), &truth).auroc.macro_;
        match fid(&probe.features(&real), &probe.features(&g_refs)) {
            Ok(f) => {
                out.metrics.fid = f.value;
                out.metrics.fid_ridge_added = f.ridge_added;
            }
            Err(e) => {
                log::warn!("fid unavailable: {e}");
                out.metrics.fid = f64::NAN;
            }
        }
    }

    if suite.has(Suite::Vqa) {
        let majority = majority_answers(corpus.train().flat_map(|r| r.vqa.iter()));
        let mut items = Vec::new();
        let mut base = Vec::new();
        let mut rows = Vec::new();
        for (i, r) in studies.iter().enumerate() {
            for (q, qa) in r.vqa.iter().enumerate() {
                let seed = derive_seed(cfg.seed, "eval-vqa", (i * 16 + q) as u64);
                let ans = answer_question(&lm, &tok(r), &qa.question, cfg, seed)?;
                rows.push(serde_json::json!({ "study_id": r.study_id, "question": qa.question, "generated": ans, "reference": qa.answer }));
                items.push((ans, qa.facts.clone()));
                let m = majority.get(&qa.question).cloned().unwrap_or_else(|| "No.".to_string());
                base.push((m, qa.facts.clone()));
            }
        }
        out.metrics.vqa_accuracy = vqa_accuracy(&items);
        out.summary.vqa = out.metrics.vqa_accuracy.all;
        out.summary.vqa_majority = vqa_accuracy(&base).all;
        out.summary.vqa_questions = items.len();
        write_jsonl(&dir.join("vqa.jsonl"), &rows)?;
    }

    out.metrics.write_json(&dir.join("metrics.json")).map_err(|e| PipelineError::io(&dir, e))?;
    out.metrics.write_csv(&dir.join("metrics.csv")).map_err(|e| PipelineError::io(&dir, e))?;
    write_json(&dir.join("summary.json"), &out.summary)?;
    Ok(out)
}

/// Runs every stage that has no artifact yet, then evaluates.
pub fn run_all(cfg: &RunConfig, ws: &Workspace) -> Result<EvalOutcome, PipelineError> {
    if ws.corpus_dir().is_err() {
        corpus_step(cfg, ws)?;
    }
    if ws.probe_path().is_err() {
        probe_step(cfg, ws)?;
    }
    if ws.vq_path().is_err() {
        vq_step(cfg, ws)?;
    }
    if cfg.train_run_stage1 && ws.stage_checkpoint(Stage::One).is_err() {
        lm_step(cfg, ws, Stage::One)?;
    }
    if ws.stage_checkpoint(Stage::Two).is_err() {
        lm_step(cfg, ws, Stage::Two)?;
    }
    evaluate(cfg, ws, Suite::Full)
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| PipelineError::Config(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

fn write_jsonl(path: &Path, rows: &[serde_json::Value]) -> Result<(), PipelineError> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| PipelineError::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationRow {
    Full,
    NoCip,
    NoVqa,
    NoStage1,
    Joint,
}

impl AblationRow {
    pub const ALL: [AblationRow; 5] = [AblationRow::Full, AblationRow::NoCip, AblationRow::NoVqa, AblationRow::NoStage1, AblationRow::Joint];

    pub fn name(self) -> &'static str {
        match self {
            AblationRow::Full => "full",
            AblationRow::NoCip => "no_cip",
            AblationRow::NoVqa => "no_vqa",
            AblationRow::NoStage1 => "no_stage1",
            AblationRow::Joint => "joint",
        }
    }

    /// Rows selected by an `--axis` value.
    pub fn for_axis(axis: &str) -> Result<Vec<AblationRow>, PipelineError> {
        Ok(match axis {
            "all" => Self::ALL.to_vec(),
            "cip" => vec![AblationRow::Full, AblationRow::NoCip],
            "vqa" => vec![AblationRow::Full, AblationRow::NoVqa],
            "stage1" => vec![AblationRow::Full, AblationRow::NoStage1],
            "objective" => vec![AblationRow::Full, AblationRow::Joint],
            _ => return Err(PipelineError::Usage(format!("unknown ablation axis {axis:?} (all, cip, vqa, stage1, objective)"))),
        })
    }

    pub fn configure(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        match self {
            AblationRow::Full => {}
            AblationRow::NoCip => c.vq_cip = false,
            AblationRow::NoVqa => c.train_include_vqa = false,
            AblationRow::NoStage1 => c.train_run_stage1 = false,
            AblationRow::Joint => c.train_objective = instructset::Objective::Joint,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub summary: EvalSummary,
    pub fid: f64,
    pub recon_ratio: f64,
}

fn ablation_row(base: &RunConfig, ws: &Workspace, row: AblationRow) -> Result<AblationResult, PipelineError> {
    let cfg = row.configure(base);
    let rws = Workspace { root: ws.root.join("ablate").join(row.name()), shared: Some(ws.root.clone()) };
    if row == AblationRow::NoCip && !rws.root.join(VQ_FILE).exists() {
        vq_step(&cfg, &rws)?;
    }
    let out = run_all(&cfg, &rws)?;
    let ratios: Vec<f64> = out.summary.recon.iter().map(|r| r.ratio).filter(|r| r.is_finite()).collect();
    let recon_ratio = if ratios.is_empty() { f64::NAN } else { ratios.iter().sum::<f64>() / ratios.len() as f64 };
    Ok(AblationResult { row, fid: out.metrics.fid, recon_ratio, summary: out.summary })
}

/// Trains and evaluates each row in `ws/ablate/<row>`, sharing the corpus,
/// probe and (except for `no_cip`) tokenizer of `ws`.
pub fn ablate(cfg: &RunConfig, ws: &Workspace, rows: &[AblationRow], parallel: bool) -> Result<Vec<AblationResult>, PipelineError> {
    if ws.corpus_dir().is_err() {
        corpus_step(cfg, ws)?;
    }
    if ws.probe_path().is_err() {
        probe_step(cfg, ws)?;
    }
    if ws.vq_path().is_err() {
        vq_step(cfg, ws)?;
    }
    let results: Vec<Result<AblationResult, PipelineError>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = rows.iter().map(|&r| s.spawn(move || ablation_row(cfg, ws, r))).collect();
            handles.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
        })
    } else {
        rows.iter().map(|&r| ablation_row(cfg, ws, r)).collect()
    };
    let results: Vec<AblationResult> = results.into_iter().collect::<Result<_, _>>()?;
    let dir = ws.root.join("ablate");
    write_ablation_table(&dir, &results)?;
    Ok(results)
}

pub fn write_ablation_table(dir: &Path, results: &[AblationResult]) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut md = String::from("| row | C2R micro-F1 | R2C macro-AUROC | FID | VQA | recon AUROC ratio |\n|---|---|---|---|---|---|\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| PipelineError::Config(e.to_string());
    w.write_record(["row", "c2r_micro_f1", "r2c_macro_auroc", "fid", "vqa", "recon_ratio"]).map_err(io)?;
    for r in results {
        let s = &r.summary;
        md.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.3} | {:.4} | {:.4} |\n",
            r.row.name(),
            s.c2r_micro_f1,
            s.r2c_macro_auroc,
            r.fid,
            s.vqa,
            r.recon_ratio
        ));
        w.write_record([
            r.row.name().to_string(),
            s.c2r_micro_f1.to_string(),
            s.r2c_macro_auroc.to_string(),
            r.fid.to_string(),
            s.vqa.to_string(),
            r.recon_ratio.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Config(e.to_string()))?;
    let p = dir.join("table.md");
    std::fs::write(&p, md).map_err(|e| PipelineError::io(&p, e))?;
    let p = dir.join("table.csv");
    std::fs::write(&p, bytes).map_err(|e| PipelineError::io(&p, e))
}
