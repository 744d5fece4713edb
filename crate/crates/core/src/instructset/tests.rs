use std::collections::{HashMap, HashSet};

use rand::Rng as _;

use super::*;
use crate::lmcore::{image_word, LmConfig, TransformerLM};
use crate::numcore::rng::{rng_from, stream_rng};
use crate::synthcorpus::{Corpus, ReportStyle, View};
use crate::vqtok::ImageTokens;

const K_IMG: usize = 32;
const D_Z: usize = 64;

fn fake_tokens(seed: u64) -> ImageTokens {
    let mut r = stream_rng(seed, "fake-tokens", 0);
    ImageTokens((0..D_Z).map(|_| r.random_range(0..K_IMG)).collect())
}

fn sources(n: usize) -> Vec<StudySource> {
    let c = Corpus::generate(n, 0.2, 5).unwrap();
    c.train().enumerate().map(|(i, r)| StudySource { record: r.clone(), tokens: fake_tokens(i as u64) }).collect()
}

fn vocab() -> crate::lmcore::Vocab {
    build_text_vocab().with_images(K_IMG)
}

#[test]
fn golden_template_bytes() {
    let golden = include_str!("../../tests/golden/template_say_hi.txt");
    assert_eq!(template::render("Say hi", "", "hi"), golden);
    let p = template::render_prompt("Say hi", "");
    assert!(p.ends_with("### Response:"));
    assert!(golden.starts_with(&p));
}

#[test]
fn parse_inverts_render() {
    let s = sources(200);
    let nl = nl_if_pairs(s.iter().map(|x| &x.record), 1, 3);
    let stream = MixStream::new(&s, &nl, &MixSchedule::default(), Stage::One, 1).unwrap();
    for rec in stream.batch(0, 500) {
        let text = rec.render();
        let p = template::parse(&text).unwrap();
        assert_eq!(p.instruction, rec.instruction);
        assert_eq!(p.input, rec.input.render());
        assert_eq!(p.response.as_deref(), Some(rec.response.render().as_str()));
        let q = template::parse(&rec.render_prompt()).unwrap();
        assert_eq!(q.response, None);
    }
}

#[test]
fn render_is_injective_on_sampled_records() {
    let s = sources(300);
    let nl = nl_if_pairs(s.iter().map(|x| &x.record), 2, 3);
    let stream = MixStream::new(&s, &nl, &MixSchedule::default(), Stage::One, 2).unwrap();
    let mut by_text: HashMap<String, (String, String, String)> = HashMap::new();
    for b in 0..20 {
        for rec in stream.batch(b, 500) {
            let key = (rec.instruction.clone(), rec.input.render(), rec.response.render());
            if let Some(prev) = by_text.insert(rec.render(), key.clone()) {
                assert_eq!(prev, key);
            }
        }
    }
}

#[test]
fn instruction_draws_are_uniform() {
    let mut rng = rng_from(17);
    for task in [TaskKind::CxrToReport, TaskKind::ReportToCxr] {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for _ in 0..10_000 {
            *counts.entry(pick_instruction(task, &mut rng).unwrap()).or_default() += 1;
        }
        assert_eq!(counts.len(), 10);
        for (k, c) in counts {
            assert!((c as f64 / 10_000.0 - 0.1).abs() <= 0.015, "{k}: {c}");
        }
    }
    assert!(pick_instruction(TaskKind::CxrVqa, &mut rng).is_err());
    let mut a = rng_from(4);
    let mut b = rng_from(4);
    for _ in 0..20 {
        assert_eq!(pick_instruction(TaskKind::CxrToReport, &mut a).unwrap(), pick_instruction(TaskKind::CxrToReport, &mut b).unwrap());
    }
}

#[test]
fn r2c_variants_ask_for_an_image() {
    let all: HashSet<&str> = R2C_INSTRUCTIONS.iter().copied().collect();
    assert_eq!(all.len(), 10);
    for v in R2C_INSTRUCTIONS {
        let l = v.to_lowercase();
        assert!(l.contains("generate") || l.contains("create"), "{v}");
        assert!(l.contains("image"), "{v}");
    }
}

#[test]
fn whole_corpus_tokenizes_without_unknowns() {
    let v = vocab();
    let c = Corpus::generate(2000, 0.2, 9).unwrap();
    for r in &c.records {
        for style in [ReportStyle::Verbose, ReportStyle::Concise] {
            assert!(!v.encode(r.report(style)).contains(&crate::lmcore::UNK), "{}", r.report(style));
        }
        for qa in &r.vqa {
            assert!(!v.encode(&qa.question).contains(&crate::lmcore::UNK), "{}", qa.question);
            assert!(!v.encode(&qa.answer).contains(&crate::lmcore::UNK), "{}", qa.answer);
        }
    }
    let nl = nl_if_pairs(c.records.iter(), 2, 1);
    for p in nl {
        for s in [&p.instruction, &p.input, &p.response] {
            assert!(!v.encode(s).contains(&crate::lmcore::UNK), "{s}");
        }
    }
}

#[test]
fn response_key_has_fixed_ids() {
    let v = build_text_vocab();
    let key: Vec<&str> = ["###", "Response", ":"].to_vec();
    let ids = v.encode("### Response:");
    assert_eq!(ids.len(), 3);
    for (id, w) in ids.iter().zip(key) {
        assert_eq!(v.token(*id), w);
    }
    assert_eq!(build_text_vocab(), v);
}

// Finds the last "### Response : \n" run by scanning token strings.
fn marker_end(v: &crate::lmcore::Vocab, ids: &[usize]) -> usize {
    let toks: Vec<String> = ids.iter().map(|&i| v.token(i)).collect();
    let mut last = None;
    for i in 0..toks.len().saturating_sub(3) {
        if toks[i] == "###" && toks[i + 1] == "Response" && toks[i + 2] == ":" && toks[i + 3] == "\n" {
            last = Some(i + 3);
        }
    }
    last.expect("marker present")
}

#[test]
fn mask_covers_exactly_response_and_eos() {
    let v = vocab();
    let s = sources(200);
    let nl = nl_if_pairs(s.iter().map(|x| &x.record), 1, 3);
    let stream = MixStream::new(&s, &nl, &MixSchedule::default(), Stage::One, 3).unwrap();
    let mut longest = 0;
    for rec in stream.batch(0, 1000) {
        let ex = build_example(&rec, &v, 320).unwrap();
        longest = longest.max(ex.ids.len());
        let m = marker_end(&v, &ex.ids);
        assert!(ex.loss_mask[..=m].iter().all(|&x| x == 0));
        // Response runs from m+1 up to and including EOS.
        let eos = ex.ids[m + 1..].iter().position(|&i| i == crate::lmcore::EOS).unwrap() + m + 1;
        assert_eq!(eos - m - 1, ex.y_len);
        assert_eq!(ex.masked_count(), ex.y_len + 1);
        assert!(ex.loss_mask[m + 1..=eos].iter().all(|&x| x == 1));
        assert!(ex.loss_mask[eos + 1..].iter().all(|&x| x == 0));
        let prefix = v.decode(&ex.ids[..=m]);
        assert!(prefix.trim_end().ends_with("### Response:"));
        assert_eq!(v.decode(&ex.ids[m + 1..eos]), rec.response.render());
    }
    assert!(longest <= 320);
}

#[test]
fn empty_response_is_an_error() {
    let rec = NlIfPair { instruction: "Say hello.".into(), input: String::new(), response: String::new() }.record();
    assert!(matches!(build_example(&rec, &vocab(), 320), Err(InstructError::EmptyResponse { .. })));
}

#[test]
fn overflow_names_the_study() {
    let s = sources(50);
    let rec = tasks::c2r_record(&s[0].record, &s[0].tokens, ReportStyle::Verbose, C2R_INSTRUCTIONS[0]);
    match build_example(&rec, &vocab(), 40) {
        Err(InstructError::TooLong { study_id, .. }) => assert_eq!(study_id, Some(s[0].record.study_id.clone())),
        other => panic!("{other:?}"),
    }
}

fn tiny_lm(seed: u64) -> TransformerLM<f64> {
    let cfg = LmConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, context: 320, init_std: 0.3 };
    let mut m = TransformerLM::<f64>::new(cfg, build_text_vocab(), seed);
    m.expand_vocab(K_IMG, seed + 1).unwrap();
    m
}

fn some_examples(n: usize) -> Vec<TokenizedExample> {
    let v = vocab();
    let s = sources(100);
    let nl = nl_if_pairs(s.iter().map(|x| &x.record), 1, 3);
    let stream = MixStream::new(&s, &nl, &MixSchedule::default(), Stage::One, 8).unwrap();
    stream.batch(0, n).iter().map(|r| build_example(r, &v, 320).unwrap()).collect()
}

fn naive_nll(m: &TransformerLM<f64>, ex: &TokenizedExample, t: usize) -> f64 {
    let logits = m.forward(&ex.ids[..ex.ids.len() - 1]).unwrap();
    let row = logits.row(t - 1);
    let mx = row.iter().cloned().fold(f64::MIN, f64::max);
    let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
    lse - row[ex.ids[t]]
}

#[test]
fn uniform_model_loss_is_log_vocab() {
    let mut m = tiny_lm(1);
    m.params.value_mut(m.head).data_mut().iter_mut().for_each(|x| *x = 0.0);
    let v = m.vocab_size() as f64;
    for ex in some_examples(5) {
        assert!((instruct_loss(&m, &ex).unwrap().mean - v.ln()).abs() < 1e-12);
        assert!((joint_loss(&m, &ex).unwrap().mean - v.ln()).abs() < 1e-12);
    }
}

#[test]
fn batch_loss_matches_naive_loop() {
    let m = tiny_lm(2);
    let exs = some_examples(3);
    let refs: Vec<&TokenizedExample> = exs.iter().collect();
    let mut g = crate::numcore::Graph::with_params(&m.params);
    let b = batch_loss(&mut g, &m, &refs, Objective::Instruct).unwrap();
    let mut sum = 0.0;
    let mut count = 0;
    for ex in &exs {
        for t in 1..ex.ids.len() {
            if ex.loss_mask[t] == 1 {
                sum += naive_nll(&m, ex, t);
                count += 1;
            }
        }
    }
    assert_eq!(b.count, count);
    assert!((b.sum - sum).abs() < 1e-10 * sum.max(1.0));
    assert!((g.value(b.mean).item() - sum / count as f64).abs() < 1e-10);
}

#[test]
fn joint_decomposes_into_instruct_plus_prefix() {
    let m = tiny_lm(3);
    for ex in some_examples(6) {
        let i = instruct_loss(&m, &ex).unwrap();
        let j = joint_loss(&m, &ex).unwrap();
        assert!(j.sum >= i.sum);
        let x_part: f64 = (1..ex.ids.len()).filter(|&t| ex.loss_mask[t] == 0).map(|t| naive_nll(&m, &ex, t)).sum();
        assert!((j.sum - i.sum - x_part).abs() < 1e-10 * j.sum);
        assert_eq!(j.count, ex.ids.len() - 1);
    }
}

#[test]
fn instruct_loss_ignores_unmasked_targets() {
    let m = tiny_lm(4);
    let ex = &some_examples(1)[0];
    let base = instruct_loss(&m, ex).unwrap();
    // Relabeling unmasked targets changes the inputs too, so compare through the
    // target builder: weights on unmasked positions are zero.
    let (_, _, w) = example::targets::<f64>(ex, Objective::Instruct);
    for (t, &wt) in w.iter().enumerate() {
        assert_eq!(wt == 1.0, ex.loss_mask[t + 1] == 1);
    }
    let mut g = crate::numcore::Graph::with_params(&m.params);
    let (inp, mut tg, w) = example::targets::<f64>(ex, Objective::Instruct);
    let logits = m.forward_packed(&mut g, &[inp]).unwrap();
    for (t, x) in tg.iter_mut().enumerate() {
        if w[t] == 0.0 {
            *x = (t * 7) % m.vocab_size();
        }
    }
    let ce = g.cross_entropy(logits, &tg, &w);
    assert_eq!(g.value(ce).item(), base.sum);
}

fn mix_fractions(stream: &MixStream, n: u64) -> [f64; 4] {
    let mut counts = [0usize; 4];
    let mut rng = rng_from(99);
    for _ in 0..n {
        counts[stream.draw_kind(&mut rng).mix_index()] += 1;
    }
    counts.map(|c| c as f64 / n as f64)
}

#[test]
fn stage_proportions_match_schedule() {
    let s = sources(300);
    let nl = nl_if_pairs(s.iter().map(|x| &x.record), 1, 3);
    let sched = MixSchedule::default();
    // Stage-2 weights sum to 110 and are drawn in proportion.
    let two = [21.0 / 110.0, 21.0 / 110.0, 63.0 / 110.0, 5.0 / 110.0];
    for (stage, want) in [(Stage::One, [0.30, 0.30, 0.20, 0.20]), (Stage::Two, two)] {
        let st = MixStream::new(&s, &nl, &sched, stage, 1).unwrap();
        let got = mix_fractions(&st, 10_000);
        for k in 0..4 {
            assert!((got[k] - want[k]).abs() <= 0.015, "{stage:?} {k}: {}", got[k]);
        }
    }
}

#[test]
fn stage_two_uses_frontal_concise_only() {
    let s = sources(400);
    assert!(s.iter().any(|x| x.record.view == View::Lateral));
    let nl = nl_if_pairs(s.iter().map(|x| &x.record), 1, 3);
    let st = MixStream::new(&s, &nl, &MixSchedule::default(), Stage::Two, 1).unwrap();
    let by_id: HashMap<&str, &StudySource> = s.iter().map(|x| (x.record.study_id.as_str(), x)).collect();
    for b in 0..20 {
        for rec in st.batch(b, 100) {
            if let Some(id) = &rec.source_study {
                let src = by_id[id.as_str()];
                assert_eq!(src.record.view, View::Frontal);
                let report = match rec.task {
                    TaskKind::CxrToReport => rec.response.render(),
                    TaskKind::ReportToCxr => rec.input.render(),
                    _ => continue,
                };
                assert_eq!(report, src.record.report(ReportStyle::Concise));
            }
        }
    }
    let laterals: Vec<StudySource> = s.iter().filter(|x| x.record.view == View::Lateral).cloned().collect();
    assert!(matches!(MixStream::new(&laterals, &nl, &MixSchedule::default(), Stage::Two, 1), Err(InstructError::EmptyPool(_))));
}

#[test]
fn dropping_vqa_only_changes_the_mix() {
    let s = sources(200);
    let nl = nl_if_pairs(s.iter().map(|x| &x.record), 1, 3);
    let sched = MixSchedule::default().without(TaskKind::CxrVqa);
    let st = MixStream::new(&s, &nl, &sched, Stage::One, 1).unwrap();
    let got = mix_fractions(&st, 10_000);
    assert_eq!(got[TaskKind::CxrVqa.mix_index()], 0.0);
    for k in [0, 1] {
        assert!((got[k] - 0.375).abs() < 0.015);
    }
}

#[test]
fn batches_are_a_function_of_seed_and_index() {
    let s = sources(100);
    let nl = nl_if_pairs(s.iter().map(|x| &x.record), 1, 3);
    let a = MixStream::new(&s, &nl, &MixSchedule::default(), Stage::One, 5).unwrap();
    let b = MixStream::new(&s, &nl, &MixSchedule::default(), Stage::One, 5).unwrap();
    assert_eq!(a.batch(7, 16), b.batch(7, 16));
    assert_ne!(a.batch(7, 16), a.batch(8, 16));
}

#[test]
fn examples_round_trip_through_jsonl() {
    let exs = some_examples(10);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("train.jsonl");
    example::write_jsonl(&p, &exs).unwrap();
    assert_eq!(example::read_jsonl(&p).unwrap(), exs);
}

#[test]
fn image_span_words_are_image_ids() {
    let v = vocab();
    let k_text = v.k_text();
    assert_eq!(v.id(&image_word(3)), Some(k_text + 3));
}
