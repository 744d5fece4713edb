use clap::Parser;

use super::pipeline::derangement;
use super::*;
use crate::instructset::{Objective, Stage};
use crate::lmcore::SampleMode;

#[test]
fn config_text_round_trips() {
    let mut c = RunConfig::default();
    c.apply_text("seed = 9\ntrain.objective = joint # comment\nmix.stage2 = 1,2,3,4\neval.sampler = top_k:5:0.7\n").unwrap();
    assert_eq!(c.seed, 9);
    assert_eq!(c.train_objective, Objective::Joint);
    assert_eq!(c.mix_stage2, [1.0, 2.0, 3.0, 4.0]);
    assert_eq!(c.eval_sampler, SampleMode::TopK { k: 5, temperature: 0.7 });
    let mut d = RunConfig::default();
    d.apply_text(&c.to_text()).unwrap();
    assert_eq!(c, d);
}

#[test]
fn bad_config_is_a_usage_error() {
    let mut c = RunConfig::default();
    for bad in ["nope.key=1", "corpus.n=abc", "train.objective=both", "justtext"] {
        let e = c.apply_override(bad).unwrap_err();
        assert_eq!(e.exit_code(), 2, "{bad}: {e}");
    }
}

#[test]
fn resolution_order() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("run.cfg");
    std::fs::write(&f, "seed = 3\ncorpus.n = 50\n").unwrap();
    let cli = Cli::try_parse_from([
        "mmvq",
        "--config",
        f.to_str().unwrap(),
        "--set",
        "corpus.n=70",
        "--seed",
        "11",
        "corpus",
    ])
    .unwrap();
    let c = commands::resolve_config(&cli).unwrap();
    assert_eq!(c.corpus_n, 70);
    assert_eq!(c.seed, 11);
}

#[test]
fn cli_rejects_bad_stage() {
    assert!(Cli::try_parse_from(["mmvq", "train-lm", "--stage", "3"]).is_err());
    assert!(Cli::try_parse_from(["mmvq", "train-lm", "--stage", "2"]).is_ok());
    assert!(Cli::try_parse_from(["mmvq", "infer", "--task", "x2y"]).is_err());
}

#[test]
fn derangement_moves_everything() {
    for n in 2..40 {
        let p = derangement(n, n as u64);
        let mut seen = vec![false; n];
        for (i, &j) in p.iter().enumerate() {
            assert_ne!(i, j);
            assert!(!seen[j]);
            seen[j] = true;
        }
    }
}

#[test]
fn missing_artifacts_name_their_producer() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path());
    let e = pipeline::load_vq(&ws).unwrap_err();
    assert!(matches!(e, PipelineError::MissingArtifact { .. }));
    assert!(e.to_string().contains("mmvq train-vq"), "{e}");
    assert_eq!(e.exit_code(), 1);
    let e = pipeline::load_lm(&ws).unwrap_err();
    assert!(e.to_string().contains("--stage 2"), "{e}");
}

#[test]
fn shared_lookup_excludes_language_models() {
    let shared = tempfile::tempdir().unwrap();
    let own = tempfile::tempdir().unwrap();
    for rel in [pipeline::VQ_FILE, "lm/stage2/final.ckpt"] {
        let p = shared.path().join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(&p, b"x").unwrap();
    }
    let ws = Workspace { root: own.path().to_path_buf(), shared: Some(shared.path().to_path_buf()) };
    assert_eq!(ws.vq_path().unwrap(), shared.path().join(pipeline::VQ_FILE));
    assert!(ws.stage_checkpoint(Stage::Two).is_err());
}

#[test]
fn ablation_axes() {
    assert_eq!(AblationRow::for_axis("all").unwrap().len(), 5);
    assert_eq!(AblationRow::for_axis("objective").unwrap(), vec![AblationRow::Full, AblationRow::Joint]);
    assert_eq!(AblationRow::for_axis("depth").unwrap_err().exit_code(), 2);
    let base = RunConfig::default();
    assert!(!AblationRow::NoCip.configure(&base).vq_cip);
    assert!(!AblationRow::NoStage1.configure(&base).train_run_stage1);
    assert_eq!(AblationRow::Joint.configure(&base).train_objective, Objective::Joint);
    assert_eq!(AblationRow::Full.configure(&base), base);
}

#[test]
fn gradient_suite_passes() {
    for r in gradsuite::run_all(1).unwrap() {
        assert!(r.passed(), "{r:?}");
    }
}
