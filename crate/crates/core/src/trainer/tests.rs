use rand::Rng as _;

use super::*;
use crate::instructset::{build_text_vocab, nl_if_pairs, MixSchedule, StudySource};
use crate::lmcore::LmConfig;
use crate::numcore::rng::stream_rng;
use crate::synthcorpus::Corpus;
use crate::vqtok::ImageTokens;

fn setup(stage: Stage, schedule: MixSchedule) -> (TransformerLM<f32>, MixStream, Vec<TokenizedExample>) {
    let c = Corpus::generate(120, 0.2, 2).unwrap();
    let studies: Vec<StudySource> = c
        .train()
        .enumerate()
        .map(|(i, r)| {
            let mut g = stream_rng(1, "tok", i as u64);
            StudySource { record: r.clone(), tokens: ImageTokens((0..64).map(|_| g.random_range(0..16)).collect()) }
        })
        .collect();
    let nl = nl_if_pairs(studies.iter().map(|s| &s.record), 1, 1);
    let stream = MixStream::new(&studies, &nl, &schedule, stage, 3).unwrap();
    let cfg = LmConfig { d_model: 32, n_layers: 1, n_heads: 2, d_ff: 64, context: 320, init_std: 0.02 };
    let mut m = TransformerLM::<f32>::new(cfg, build_text_vocab(), 4);
    m.expand_vocab(16, 5).unwrap();
    let val_stream = MixStream::new(&studies, &nl, &schedule, stage, 77).unwrap();
    let val = val_stream.batch(0, 24).iter().map(|r| build_example(r, &m.vocab, 320).unwrap()).collect();
    (m, stream, val)
}

fn cfg(steps: u64) -> TrainConfig {
    TrainConfig { batch_size: 4, lr: 1e-3, ..TrainConfig::desk(Stage::One, steps, 9) }
}

#[test]
fn runs_are_bit_identical() {
    let (m, s, _) = setup(Stage::One, MixSchedule::default());
    let a = train_stage(m.clone(), &s, cfg(4), &[], None).unwrap();
    let b = train_stage(m, &s, cfg(4), &[], None).unwrap();
    assert_eq!(a.to_checkpoint().to_bytes(LM_MAGIC), b.to_checkpoint().to_bytes(LM_MAGIC));
}

#[test]
fn resume_matches_uninterrupted_training() {
    let (m, s, _) = setup(Stage::One, MixSchedule::default());
    let full = train_stage(m.clone(), &s, cfg(6), &[], None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let half = train_stage(m, &s, cfg(3), &[], None).unwrap();
    let p = dir.path().join("half.ckpt");
    half.save(&p).unwrap();
    let mut resumed = Trainer::load(&p).unwrap();
    assert_eq!(resumed.step, 3);
    resumed.cfg.steps = 6;
    resumed.run(&s, &[], None).unwrap();
    let mut want = full.to_checkpoint();
    let mut got = resumed.to_checkpoint();
    // Only the configured step budget differs.
    want.meta = serde_json::Value::Null;
    got.meta = serde_json::Value::Null;
    assert_eq!(want.to_bytes(LM_MAGIC), got.to_bytes(LM_MAGIC));
}

#[test]
fn save_load_save_is_byte_identical() {
    let (m, s, _) = setup(Stage::One, MixSchedule::default());
    let t = train_stage(m, &s, cfg(2), &[], None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    t.save(&a).unwrap();
    Trainer::load(&a).unwrap().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn corrupted_blob_is_rejected() {
    let (m, s, _) = setup(Stage::One, MixSchedule::default());
    let t = train_stage(m, &s, cfg(1), &[], None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.ckpt");
    t.save(&p).unwrap();
    let mut bytes = std::fs::read(&p).unwrap();
    let n = bytes.len();
    bytes[n - 100] ^= 0x40;
    std::fs::write(&p, &bytes).unwrap();
    match Trainer::load(&p) {
        Err(TrainError::Checkpoint(e)) => assert!(matches!(e, CheckpointError::HashMismatch { .. }), "{e:?}"),
        other => panic!("{:?}", other.map(|t| t.step)),
    }
    std::fs::write(&p, &bytes[..n / 2]).unwrap();
    assert!(matches!(Trainer::load(&p), Err(TrainError::Checkpoint(CheckpointError::Truncated { .. }))));
}

#[test]
fn log_sums_are_consistent() {
    let (m, s, _) = setup(Stage::One, MixSchedule::default());
    let t = train_stage(m, &s, cfg(3), &[], None).unwrap();
    for r in &t.log.steps {
        assert!((r.loss_sum - r.loss_mean * r.tokens as f64).abs() <= 1e-9 * r.loss_sum.abs().max(1.0));
    }
    let steps: Vec<u64> = t.log.steps.iter().filter(|r| r.task == "all").map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 1, 2]);
}

#[test]
fn joint_sum_exceeds_instruct_sum_on_a_batch() {
    let (m, s, _) = setup(Stage::One, MixSchedule::default());
    let t = Trainer::new(m, cfg(1)).unwrap();
    let exs = t.batch_examples(&s, 0).unwrap();
    let refs: Vec<&TokenizedExample> = exs.iter().collect();
    let mut g = Graph::with_params(&t.model.params);
    let i = batch_loss(&mut g, &t.model, &refs, Objective::Instruct).unwrap();
    let j = batch_loss(&mut g, &t.model, &refs, Objective::Joint).unwrap();
    assert!(j.sum >= i.sum);
}

#[test]
fn validation_loss_drops_on_a_short_run() {
    let (m, s, val) = setup(Stage::One, MixSchedule::default());
    let c = TrainConfig { batch_size: 8, lr: 3e-3, ..TrainConfig::desk(Stage::One, 40, 9) };
    let t = train_stage(m, &s, c, &val, None).unwrap();
    for (task, (a, b)) in t.log.validation_span() {
        assert!(b < a, "{task}: {a} -> {b}");
    }
}

#[test]
fn dropping_vqa_removes_it_from_batches() {
    let (m, s, _) = setup(Stage::One, MixSchedule::default().without(TaskKind::CxrVqa));
    let t = train_stage(m, &s, cfg(10), &[], None).unwrap();
    assert!(t.log.steps.iter().all(|r| r.task != "vqa"));
    assert!(t.log.steps.iter().any(|r| r.task == "c2r"));
}

#[test]
fn unexpanded_model_is_refused() {
    let cfg_lm = LmConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, context: 64, init_std: 0.02 };
    let m = TransformerLM::<f32>::new(cfg_lm, build_text_vocab(), 1);
    assert!(matches!(Trainer::new(m, cfg(1)), Err(TrainError::Config(_))));
}

#[test]
fn stage_mismatch_is_refused() {
    let (m, s, _) = setup(Stage::One, MixSchedule::default());
    let mut t = Trainer::new(m, TrainConfig { stage: Stage::Two, ..cfg(1) }).unwrap();
    assert!(t.run(&s, &[], None).is_err());
}
