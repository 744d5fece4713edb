use super::*;
use crate::numcore::Tensor;

fn tiny_vocab() -> Vocab {
    Vocab::build(["the heart is enlarged . no effusion : ### End Response", "< >"])
}

fn tiny_cfg() -> LmConfig {
    LmConfig { d_model: 16, n_layers: 2, n_heads: 2, d_ff: 32, context: 24, init_std: 0.3 }
}

fn tiny_model() -> TransformerLM<f64> {
    let mut m = TransformerLM::<f64>::new(tiny_cfg(), tiny_vocab(), 7);
    // Non-trivial norms and biases so the oracle exercises them.
    let mut r = crate::numcore::rng::stream_rng(3, "perturb", 0);
    use rand::Rng as _;
    for p in m.params.iter_mut() {
        if p.name.contains(".b") || p.name.contains(".g") {
            for v in p.value.data_mut() {
                *v += r.random_range(-0.2..0.2);
            }
        }
    }
    m
}

// Plain triple-loop transformer used as the oracle.
fn naive_forward(m: &TransformerLM<f64>, ids: &[usize]) -> Vec<Vec<f64>> {
    let p = &m.params;
    let cfg = &m.cfg;
    let (d, nh) = (cfg.d_model, cfg.n_heads);
    let dh = d / nh;
    let get = |id| p.value(id).data().to_vec();
    let mat = |x: &Vec<Vec<f64>>, w: &[f64], b: Option<&[f64]>, o: usize| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                (0..o)
                    .map(|j| row.iter().enumerate().map(|(i, &v)| v * w[i * o + j]).sum::<f64>() + b.map_or(0.0, |b| b[j]))
                    .collect()
            })
            .collect()
    };
    let ln = |x: &Vec<Vec<f64>>, g: &[f64], b: &[f64]| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                let mu = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d as f64;
                row.iter().enumerate().map(|(j, v)| (v - mu) / (var + 1e-5).sqrt() * g[j] + b[j]).collect()
            })
            .collect()
    };
    let te = get(m.tok_emb);
    let pe = get(m.pos_emb);
    let mut x: Vec<Vec<f64>> =
        ids.iter().enumerate().map(|(t, &id)| (0..d).map(|j| te[id * d + j] + pe[t * d + j]).collect()).collect();
    for blk in &m.blocks {
        let h = ln(&x, &get(blk.ln1_g), &get(blk.ln1_b));
        let qkv = mat(&h, &get(blk.qkv_w), Some(&get(blk.qkv_b)), 3 * d);
        let mut att = vec![vec![0.0; d]; ids.len()];
        for hd in 0..nh {
            for i in 0..ids.len() {
                let s: Vec<f64> = (0..=i)
                    .map(|j| (0..dh).map(|c| qkv[i][hd * dh + c] * qkv[j][d + hd * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = s.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
                for j in 0..=i {
                    let w = (s[j] - mx).exp() / z;
                    for c in 0..dh {
                        att[i][hd * dh + c] += w * qkv[j][2 * d + hd * dh + c];
                    }
                }
            }
        }
        let o = mat(&att, &get(blk.out_w), Some(&get(blk.out_b)), d);
        for (xr, orow) in x.iter_mut().zip(&o) {
            xr.iter_mut().zip(orow).for_each(|(a, b)| *a += b);
        }
        let h = ln(&x, &get(blk.ln2_g), &get(blk.ln2_b));
        let f = mat(&h, &get(blk.fc1_w), Some(&get(blk.fc1_b)), cfg.d_ff);
        let f: Vec<Vec<f64>> = f
            .iter()
            .map(|r| r.iter().map(|&v| 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh())).collect())
            .collect();
        let o = mat(&f, &get(blk.fc2_w), Some(&get(blk.fc2_b)), d);
        for (xr, orow) in x.iter_mut().zip(&o) {
            xr.iter_mut().zip(orow).for_each(|(a, b)| *a += b);
        }
    }
    let h = ln(&x, &get(m.lnf_g), &get(m.lnf_b));
    mat(&h, &get(m.head), None, m.vocab_size())
}

#[test]
fn forward_matches_naive_oracle() {
    let m = tiny_model();
    let ids = [3usize, 5, 1, 7, 4, 4, 9, 2, 6];
    let got = m.forward(&ids).unwrap();
    let want = naive_forward(&m, &ids);
    for (t, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            assert!((got.row(t)[j] - w).abs() < 1e-10, "t={t} j={j}");
        }
    }
}

#[test]
fn packed_sequences_do_not_interact() {
    let m = tiny_model();
    let a = [3usize, 5, 1, 7];
    let b = [9usize, 2, 6];
    let mut g = crate::numcore::Graph::with_params(&m.params);
    let l = m.forward_packed(&mut g, &[&a, &b]).unwrap();
    let packed = g.value(l).clone();
    let fa = m.forward(&a).unwrap();
    let fb = m.forward(&b).unwrap();
    for t in 0..a.len() {
        for (x, y) in packed.row(t).iter().zip(fa.row(t)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    for t in 0..b.len() {
        for (x, y) in packed.row(a.len() + t).iter().zip(fb.row(t)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn causal_prefix_is_unaffected_by_later_tokens() {
    let m = tiny_model();
    let a = m.forward(&[3, 5, 1, 7, 4]).unwrap();
    let b = m.forward(&[3, 5, 1, 8, 9]).unwrap();
    for t in 0..3 {
        assert_eq!(a.row(t), b.row(t));
    }
    assert_ne!(a.row(3), b.row(3));
}

#[test]
fn cached_decoding_matches_full_forward() {
    let m = tiny_model();
    let ids = [3usize, 5, 1, 7, 4, 4, 9, 2];
    let full = m.forward(&ids).unwrap();
    let mut cache = KvCache::new(m.blocks.len());
    let v = m.vocab_size();
    let mut rows = m.extend(&mut cache, &ids[..5]).unwrap();
    for &id in &ids[5..] {
        rows.extend(m.extend(&mut cache, &[id]).unwrap());
    }
    assert_eq!(cache.len(), ids.len());
    for t in 0..ids.len() {
        for j in 0..v {
            assert!((rows[t * v + j] - full.row(t)[j]).abs() < 1e-10);
        }
    }
}

#[test]
fn context_overflow_is_an_error() {
    let m = tiny_model();
    let ids = vec![3usize; 25];
    assert!(matches!(m.forward(&ids), Err(LmError::ContextOverflow { len: 25, max: 24 })));
}

#[test]
fn expansion_preserves_text_logits_and_init_stats() {
    let m0 = tiny_model();
    let mut m = m0.clone();
    let k_text = m.vocab.k_text();
    m.expand_vocab(256, 11).unwrap();
    assert_eq!(m.vocab_size(), k_text + 256);
    assert_eq!(m.vocab.id(&image_word(5)), Some(k_text + 5));
    let ids = [3usize, 5, 1, 7];
    let before = m0.forward(&ids).unwrap();
    let after = m.forward(&ids).unwrap();
    for t in 0..ids.len() {
        assert_eq!(before.row(t), &after.row(t)[..k_text]);
    }
    let emb = m.params.value(m.tok_emb);
    let new: Vec<f64> = emb.data()[k_text * m.cfg.d_model..].to_vec();
    let mean = new.iter().sum::<f64>() / new.len() as f64;
    let sd = (new.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / new.len() as f64).sqrt();
    assert!(mean.abs() < 0.003 && (sd - 0.02).abs() < 0.002, "mean {mean} sd {sd}");
    assert!(m.expand_vocab(8, 1).is_err());
}

#[test]
fn top_k_one_equals_greedy() {
    let m = tiny_model();
    let prompt = [3usize, 5, 1];
    let g = m.sample(&prompt, &SamplerConfig::greedy(10, Constraint::None), 1).unwrap();
    let k1 = SamplerConfig { mode: SampleMode::TopK { k: 1, temperature: 0.7 }, max_new_tokens: 10, constraint: Constraint::None };
    for seed in 0..5 {
        assert_eq!(m.sample(&prompt, &k1, seed).unwrap(), g);
    }
}

#[test]
fn sampling_is_seed_deterministic() {
    let m = tiny_model();
    let cfg = SamplerConfig { mode: SampleMode::Temperature { temperature: 1.5 }, max_new_tokens: 12, constraint: Constraint::None };
    assert_eq!(m.sample(&[3, 5], &cfg, 9).unwrap(), m.sample(&[3, 5], &cfg, 9).unwrap());
}

#[test]
fn argmax_breaks_ties_low() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
}

#[test]
fn image_constraint_yields_exact_span() {
    let mut m = tiny_model();
    m.expand_vocab(16, 2).unwrap();
    let cfg = SamplerConfig { mode: SampleMode::Temperature { temperature: 1.0 }, max_new_tokens: 20, constraint: Constraint::Image { d_z: 6 } };
    let g = m.sample(&[3, 5], &cfg, 4).unwrap();
    assert_eq!(g.stop, StopReason::Eos);
    assert_eq!(g.ids.len(), 8);
    assert_eq!(m.vocab.token(g.ids[0]), "<");
    assert_eq!(m.vocab.token(g.ids[7]), ">");
    let toks = m.vocab.image_tokens_from_ids(&g.ids[1..7]).unwrap();
    assert!(toks.0.iter().all(|&i| i < 16));
}

#[test]
fn text_constraint_never_emits_image_ids() {
    let mut m = tiny_model();
    m.expand_vocab(64, 2).unwrap();
    // Bias the head heavily toward image columns.
    let k_text = m.vocab.k_text();
    let v = m.vocab_size();
    let head = m.params.value_mut(m.head);
    for r in 0..m.cfg.d_model {
        for c in k_text..v {
            head.data_mut()[r * v + c] += 5.0;
        }
    }
    let cfg = SamplerConfig { mode: SampleMode::Temperature { temperature: 1.0 }, max_new_tokens: 10, constraint: Constraint::TextOnly };
    let g = m.sample(&[3, 5], &cfg, 4).unwrap();
    assert!(g.ids.iter().all(|&i| i < k_text && i != PAD && i != UNK));
}

#[test]
fn checkpoint_round_trip_after_expansion() {
    let mut m = TransformerLM::<f32>::new(tiny_cfg(), tiny_vocab(), 5);
    m.expand_vocab(32, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.ckpt");
    m.save(&path).unwrap();
    let back = TransformerLM::<f32>::load(&path).unwrap();
    assert_eq!(back, m);
    let t: Tensor<f32> = back.forward(&[3, 4]).unwrap();
    assert_eq!(t.shape(), &[2, m.vocab_size()]);
}
