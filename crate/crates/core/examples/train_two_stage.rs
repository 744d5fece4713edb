//! Runs the data stages at small scale, then both fine-tuning stages, and
//! prints the loss curves. Artifacts go to a directory given as the first
//! argument (default: a temp dir).
//!
//! cargo run --release --example train_two_stage -- [work_dir]

use mmvq::cli::pipeline::{self, Workspace};
use mmvq::cli::RunConfig;
use mmvq::instructset::Stage;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mmvq_two_stage"));
    let ws = Workspace::new(&root);
    let mut cfg = RunConfig::from_env()?;
    for kv in ["corpus.n=800", "probe.epochs=3", "vq.epochs=3", "train.stage1_epochs=1", "train.stage2_epochs=1", "train.eval_every=20"] {
        cfg.apply_override(kv)?;
    }

    pipeline::corpus_step(&cfg, &ws)?;
    pipeline::probe_step(&cfg, &ws)?;
    pipeline::vq_step(&cfg, &ws)?;
    for stage in [Stage::One, Stage::Two] {
        let t = pipeline::lm_step(&cfg, &ws, stage)?;
        let rows: Vec<_> = t.log.steps.iter().filter(|r| r.task == "all").collect();
        let first = rows.first().map(|r| r.loss_mean).unwrap_or(f64::NAN);
        let last = rows.last().map(|r| r.loss_mean).unwrap_or(f64::NAN);
        println!("stage {}: {} steps, batch loss {first:.3} -> {last:.3}", stage.number(), t.step);
        for (task, (a, b)) in t.log.validation_span() {
            println!("  validation {task:<6} {a:.3} -> {b:.3}");
        }
    }
    println!("checkpoints and logs under {}", root.join("lm").display());
    Ok(())
}
