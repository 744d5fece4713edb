//! Every stage end to end with the default configuration, as the acceptance
//! run does. Stages whose artifacts already exist are skipped.
//!
//! cargo run --release --example full_pipeline -- [work_dir] [key=value ...]

use mmvq::cli::pipeline::{run_all, Workspace};
use mmvq::cli::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let root = args.next().unwrap_or_else(|| "work".into());
    let mut cfg = RunConfig::from_env()?;
    for kv in args {
        cfg.apply_override(&kv)?;
    }
    let t = std::time::Instant::now();
    let out = run_all(&cfg, &Workspace::new(&root))?;
    let s = &out.summary;
    println!("finished in {:.1} min over {} test studies", t.elapsed().as_secs_f64() / 60.0, s.studies);
    for r in &s.recon {
        println!("recon {:<13} {:.3} / {:.3} = {:.3}", r.kind, r.reconstructed, r.original, r.ratio);
    }
    println!("C2R micro-F1      {:.3} (shuffled {:.3})", s.c2r_micro_f1, s.c2r_shuffled_micro_f1);
    println!("R2C macro-AUROC   {:.3} (shuffled {:.3})", s.r2c_macro_auroc, s.r2c_shuffled_macro_auroc);
    println!("FID               {:.3}", out.metrics.fid);
    println!("VQA               {:.3} (majority {:.3}, {} questions)", s.vqa, s.vqa_majority, s.vqa_questions);
    Ok(())
}
