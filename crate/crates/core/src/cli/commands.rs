use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::config::RunConfig;
use super::pipeline::{self, AblationRow, Suite, Workspace};
use super::{gradsuite, PipelineError};
use crate::instructset::Stage;
use crate::synthcorpus::{read_image, write_image, write_pgm};
use crate::vqtok::ImageTokens;

#[derive(Debug, Parser)]
#[command(name = "mmvq", about = "Synthetic chest X-ray corpus, VQ image tokens and a bidirectional instruction-tuned LM")]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. `--set train.lr=1e-4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed (overrides MMVQ_SEED and the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Workspace directory holding all artifacts.
    #[arg(long, global = true, default_value = "work")]
    pub work: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InferTask {
    C2r,
    R2c,
    Vqa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Full,
    C2r,
    R2c,
    Vqa,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus.
    Corpus,
    /// Train the frozen probe classifier.
    TrainProbe,
    /// Train the VQ tokenizer and tokenize every study.
    TrainVq {
        #[arg(long)]
        no_cip: bool,
    },
    /// Train one language-model stage.
    TrainLm {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
    },
    /// Run the trained model on one input.
    Infer {
        #[arg(long, value_enum)]
        task: InferTask,
        /// Image file (`.f32`) for c2r and vqa.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Report text for r2c.
        #[arg(long)]
        report: Option<String>,
        /// Question text for vqa.
        #[arg(long)]
        question: Option<String>,
        /// Output path stem for r2c (writes `.f32` and `.pgm`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the stage-2 model on the test split.
    Eval {
        #[arg(long, value_enum, default_value = "full")]
        suite: SuiteArg,
    },
    /// Finite-difference gradient checks of every objective.
    Gradcheck,
    /// Train and evaluate ablation rows.
    Ablate {
        #[arg(long, default_value = "all")]
        axis: String,
        #[arg(long)]
        parallel: bool,
    },
    /// Every stage end to end, skipping stages whose artifacts exist.
    Pipeline,
}

/// Resolves configuration: defaults, then MMVQ_SEED, then the file, then
/// `--set`, then `--seed`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::from_env()?;
    if let Some(p) = &cli.config {
        cfg.apply_file(p)?;
    }
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn need<'a, T>(v: &'a Option<T>, flag: &str, task: &str) -> Result<&'a T, PipelineError> {
    v.as_ref().ok_or_else(|| PipelineError::Usage(format!("--task {task} needs {flag}")))
}

fn infer(cfg: &RunConfig, ws: &Workspace, task: InferTask, image: &Option<PathBuf>, report: &Option<String>, question: &Option<String>, out: &Option<PathBuf>) -> Result<(), PipelineError> {
    let load_tokens = |p: &Path| -> Result<ImageTokens, PipelineError> {
        let img = read_image(p)?;
        Ok(pipeline::load_vq(ws)?.encode(&[&img])?.remove(0))
    };
    let seed = cfg.seed;
    match task {
        InferTask::C2r => {
            let t = load_tokens(need(image, "--image", "c2r")?)?;
            let lm = pipeline::load_lm(ws)?;
            println!("{}", pipeline::generate_report(&lm, &t, cfg, seed)?);
        }
        InferTask::Vqa => {
            let q = need(question, "--question", "vqa")?;
            let t = load_tokens(need(image, "--image", "vqa")?)?;
            let lm = pipeline::load_lm(ws)?;
            println!("{}", pipeline::answer_question(&lm, &t, q, cfg, seed)?);
        }
        InferTask::R2c => {
            let r = need(report, "--report", "r2c")?;
            let stem = need(out, "--out", "r2c")?;
            let lm = pipeline::load_lm(ws)?;
            let vq = pipeline::load_vq(ws)?;
            let img = pipeline::generate_image(&lm, &vq, r, cfg, seed)?;
            write_image(&stem.with_extension("f32"), &img)?;
            write_pgm(&stem.with_extension("pgm"), &img)?;
            println!("{}", stem.with_extension("f32").display());
        }
    }
    Ok(())
}

/// Executes a parsed command line.
pub fn run(cli: &Cli) -> Result<(), PipelineError> {
    let mut cfg = resolve_config(cli)?;
    let ws = Workspace::new(&cli.work);
    match &cli.command {
        Command::Corpus => {
            let c = pipeline::corpus_step(&cfg, &ws)?;
            println!("wrote {} studies to {}", c.records.len(), ws.path(pipeline::CORPUS_DIR).display());
        }
        Command::TrainProbe => {
            pipeline::probe_step(&cfg, &ws)?;
            println!("wrote {}", ws.path(pipeline::PROBE_FILE).display());
        }
        Command::TrainVq { no_cip } => {
            if *no_cip {
                cfg.vq_cip = false;
            }
            pipeline::vq_step(&cfg, &ws)?;
            println!("wrote {}", ws.path(pipeline::VQ_FILE).display());
        }
        Command::TrainLm { stage } => {
            let stage = Stage::from_number(*stage)?;
            let t = pipeline::lm_step(&cfg, &ws, stage)?;
            println!("stage {} finished after {} steps in {}", stage.number(), t.step, ws.stage_dir(stage).display());
        }
        Command::Infer { task, image, report, question, out } => infer(&cfg, &ws, *task, image, report, question, out)?,
        Command::Eval { suite } => {
            let suite = match suite {
                SuiteArg::Full => Suite::Full,
                SuiteArg::C2r => Suite::C2r,
                SuiteArg::R2c => Suite::R2c,
                SuiteArg::Vqa => Suite::Vqa,
            };
            let out = pipeline::evaluate(&cfg, &ws, suite)?;
            for (k, v) in out.metrics.rows() {
                println!("{k}\t{v:.6}");
            }
        }
        Command::Gradcheck => {
            let results = gradsuite::run_all(cfg.seed)?;
            let mut failed = false;
            for r in &results {
                println!(
                    "{}\t{}\tmax_rel_err={:.3e}\tchecked={}\tworst={}",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_rel_err,
                    r.checked,
                    r.worst
                );
                failed |= !r.passed();
            }
            if failed {
                return Err(PipelineError::Config("gradient check failed".into()));
            }
        }
        Command::Ablate { axis, parallel } => {
            let rows = AblationRow::for_axis(axis)?;
            pipeline::ablate(&cfg, &ws, &rows, *parallel)?;
            let p = ws.root.join("ablate/table.md");
            let table = std::fs::read_to_string(&p).map_err(|e| PipelineError::io(&p, e))?;
            print!("{table}");
        }
        Command::Pipeline => {
            let out = pipeline::run_all(&cfg, &ws)?;
            println!("{}", serde_json::to_string_pretty(&out.summary).map_err(|e| PipelineError::Config(e.to_string()))?);
        }
    }
    Ok(())
}
