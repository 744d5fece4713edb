use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::numcore::rng::rng_from;

fn randn(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = rng_from(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z }).collect::<Vec<f64>>();
    Tensor::from_vec(shape, data).unwrap()
}

#[test]
fn adamw_zero_grad_is_fixed_point() {
    let mut ps = ParamSet::<f64>::new();
    ps.add("p", Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap()).unwrap();
    let before = ps.clone();
    let mut st = AdamWState::new(&ps, AdamWConfig { weight_decay: 0.0, ..Default::default() });
    st.step(&mut ps).unwrap();
    assert_eq!(ps.value(ParamId(0)), before.value(ParamId(0)));
    assert_eq!(st.step, 1);
}

#[test]
fn adamw_single_step_closed_form() {
    let mut ps = ParamSet::<f64>::new();
    let id = ps.add("p", Tensor::scalar(1.0)).unwrap();
    ps.get_mut(id).grad = Tensor::scalar(0.1);
    let hyper = AdamWConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
    let mut st = AdamWState::new(&ps, hyper);
    st.step(&mut ps).unwrap();
    // m̂ = 0.1, v̂ = 0.01 after bias correction
    let expected = 1.0 - 0.1 * 0.1 / (0.01f64.sqrt() + 1e-8);
    assert!((ps.value(id).item() - expected).abs() < 1e-12);
    assert!((ps.value(id).item() - 0.9).abs() < 1e-6);
}

#[test]
fn adamw_decay_only() {
    let mut ps = ParamSet::<f64>::new();
    let id = ps.add("p", Tensor::scalar(1.0)).unwrap();
    let mut st = AdamWState::new(&ps, AdamWConfig { lr: 0.1, weight_decay: 0.1, ..Default::default() });
    st.step(&mut ps).unwrap();
    assert!((ps.value(id).item() - 0.99).abs() < 1e-15);
}

#[test]
fn adamw_rejects_shape_mismatch() {
    let mut ps = ParamSet::<f64>::new();
    let id = ps.add("p", Tensor::zeros(&[2])).unwrap();
    ps.get_mut(id).grad = Tensor::zeros(&[3]);
    let mut st = AdamWState::new(&ps, AdamWConfig::default());
    assert!(matches!(st.step(&mut ps), Err(NumError::ShapeMismatch { .. })));
}

#[test]
fn adamw_is_bit_deterministic() {
    let run = || {
        let mut ps = ParamSet::<f32>::new();
        let id = ps.add("w", randn(&[16], 3, 1.0).cast()).unwrap();
        let mut st = AdamWState::new(&ps, AdamWConfig { weight_decay: 0.01, ..Default::default() });
        for k in 0..5 {
            ps.get_mut(id).grad = randn(&[16], 10 + k, 0.3).cast();
            st.step(&mut ps).unwrap();
        }
        ps.value(id).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn ce_uniform_logits() {
    let logits = Tensor::<f64>::zeros(&[1, 8]);
    let (sum, count) = softmax_cross_entropy(&logits, &[3], &[1]).unwrap();
    assert_eq!(count, 1);
    assert!((sum - 8f64.ln()).abs() < 1e-12);
}

#[test]
fn ce_confident_target_goes_to_zero() {
    let mut logits = Tensor::<f64>::zeros(&[1, 5]);
    logits.data_mut()[2] = 60.0;
    let (sum, _) = softmax_cross_entropy(&logits, &[2], &[1]).unwrap();
    assert!(sum < 1e-20);
}

#[test]
fn ce_all_masked_returns_zero_zero() {
    let logits = randn(&[3, 4], 1, 1.0);
    assert_eq!(softmax_cross_entropy(&logits, &[0, 1, 2], &[0, 0, 0]).unwrap(), (0.0, 0));
}

#[test]
fn ce_matches_naive_loop() {
    let logits = randn(&[3, 5], 42, 2.0);
    let targets = [4, 0, 2];
    let mask = [1u8, 0, 1];
    let (sum, count) = softmax_cross_entropy(&logits, &targets, &mask).unwrap();
    let mut naive = 0.0;
    for t in 0..3 {
        if mask[t] == 0 {
            continue;
        }
        let row = logits.row(t);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        naive += -(row[targets[t]].exp() / z).ln();
    }
    assert_eq!(count, 2);
    assert!((sum - naive).abs() < 1e-10);
}

#[test]
fn ce_shift_invariant() {
    let logits = randn(&[4, 6], 7, 1.5);
    let shifted = logits.map(|x| x + 123.25);
    let t = [1, 2, 3, 5];
    let m = [1u8; 4];
    let a = softmax_cross_entropy(&logits, &t, &m).unwrap().0;
    let b = softmax_cross_entropy(&shifted, &t, &m).unwrap().0;
    assert!((a - b).abs() < 1e-10);
}

#[test]
fn gradcheck_linear_loss_is_exact() {
    let mut ps = ParamSet::<f64>::new();
    let id = ps.add("w", randn(&[5], 1, 1.0)).unwrap();
    let rep = grad_check(
        &mut ps,
        |g| {
            let w = g.param(id);
            g.sum(w)
        },
        1e-5,
        10,
        0,
        &[],
    )
    .unwrap();
    assert!(rep.max_rel_err < 1e-9, "{rep:?}");
}

#[test]
fn gradcheck_reports_nonfinite() {
    let mut ps = ParamSet::<f64>::new();
    let id = ps.add("w", Tensor::scalar(0.0)).unwrap();
    let res = grad_check(
        &mut ps,
        |g| {
            let w = g.param(id);
            let v = g.value(w).item();
            let c = g.constant(Tensor::scalar(if v != 0.0 { f64::NAN } else { 1.0 }));
            let m = g.mul(w, c);
            g.sum(m)
        },
        1e-5,
        1,
        0,
        &[],
    );
    assert!(matches!(res, Err(NumError::NonFiniteLoss { index: 0, .. })));
}

/// Every differentiable op, chained, against finite differences.
#[test]
fn gradcheck_op_zoo() {
    let mut ps = ParamSet::<f64>::new();
    let x = ps.add("x", randn(&[2, 6, 6, 2], 1, 1.0)).unwrap();
    let cw = ps.add("cw", randn(&[18, 3], 2, 0.4)).unwrap();
    let cb = ps.add("cb", randn(&[3], 3, 0.1)).unwrap();
    let lw = ps.add("lw", randn(&[3, 12], 4, 0.5)).unwrap();
    let lb = ps.add("lb", randn(&[12], 5, 0.1)).unwrap();
    let gn = ps.add("gn", randn(&[12], 6, 0.2).map(|v| v + 1.0)).unwrap();
    let bn = ps.add("bn", randn(&[12], 7, 0.1)).unwrap();
    let emb = ps.add("emb", randn(&[7, 4], 8, 1.0)).unwrap();
    let mm = ps.add("mm", randn(&[4, 5], 9, 0.5)).unwrap();
    let spec = ConvSpec { kernel: 3, stride: 2, pad: 1 };
    let rep = grad_check(
        &mut ps,
        |g| {
            let xv = g.param(x);
            let (w, b) = (g.param(cw), g.param(cb));
            let c = g.conv2d(xv, w, b, spec); // [2,3,3,3]
            let c = g.gelu(c);
            let u = g.upsample2(c); // [2,6,6,3]
            let flat = g.reshape(u, &[72, 3]);
            let (w2, b2) = (g.param(lw), g.param(lb));
            let h = g.linear(flat, w2, Some(b2)); // [72,12]
            let (gg, bb) = (g.param(gn), g.param(bn));
            let h = g.layer_norm(h, gg, bb);
            let qkv = g.tanh(h);
            let a = g.causal_attention(qkv, 2, &[Segment { start: 0, len: 30 }, Segment { start: 30, len: 42 }]);
            let s = g.sigmoid(a);
            let l1 = g.sum_squares(s);
            let e = g.param(emb);
            let rows = g.embedding(e, &[0, 3, 3, 6, 1]);
            let mmv = g.param(mm);
            let logits = g.matmul(rows, mmv);
            let ce = g.cross_entropy(logits, &[1, 4, 0, 2, 3], &[1.0, 0.5, 0.0, 1.0, 2.0]);
            let bce = g.bce_with_logits(logits, &[1.0, 0.0, 1.0, 0.0, 1.0].repeat(5), 0.3);
            let ab = g.sum_abs(rows);
            let d = g.sub(ce, bce);
            let t = g.add(l1, d);
            let t = g.add(t, ab);
            g.scale(t, 0.5)
        },
        1e-5,
        12,
        11,
        &[],
    )
    .unwrap();
    assert!(rep.max_rel_err < 1e-4, "{rep:?}");
    assert!(rep.checked > 80);
}

fn naive_attention(qkv: &Tensor<f64>, heads: usize, segs: &[Segment]) -> Tensor<f64> {
    let d = qkv.cols() / 3;
    let dh = d / heads;
    let mut out = Tensor::zeros(&[qkv.rows(), d]);
    for s in segs {
        for h in 0..heads {
            for i in 0..s.len {
                let qi = qkv.row(s.start + i);
                let mut scores = Vec::new();
                for j in 0..=i {
                    let kj = qkv.row(s.start + j);
                    let dot: f64 = (0..dh).map(|c| qi[h * dh + c] * kj[d + h * dh + c]).sum();
                    scores.push(dot / (dh as f64).sqrt());
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for c in 0..dh {
                    let mut acc = 0.0;
                    for (j, sc) in scores.iter().enumerate() {
                        acc += (sc - m).exp() / z * qkv.row(s.start + j)[2 * d + h * dh + c];
                    }
                    out.row_mut(s.start + i)[h * dh + c] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn attention_matches_naive_loops() {
    let qkv = randn(&[11, 24], 5, 1.0);
    let segs = [Segment { start: 0, len: 4 }, Segment { start: 4, len: 7 }];
    let mut g = Graph::<f64>::new();
    let v = g.constant(qkv.clone());
    let a = g.causal_attention(v, 2, &segs);
    let naive = naive_attention(&qkv, 2, &segs);
    for (x, y) in g.value(a).data().iter().zip(naive.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut ps = ParamSet::<f64>::new();
    let w = ps.add("w", randn(&[3, 2], 1, 1.0)).unwrap();
    let mut g = Graph::with_params(&ps);
    let x = g.constant(randn(&[4, 3], 2, 1.0));
    let wv = g.param(w);
    let y = g.matmul(x, wv);
    let l = g.sum_squares(y);
    let grads = g.backward(l);
    assert!(grads.wrt(x).is_none());
    assert!(grads.param(w).is_some());
}

#[test]
fn random_gemm_matches_naive() {
    let mut rng = rng_from(9);
    let (m, k, n) = (7, 5, 3);
    let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut c = vec![0.0; m * n];
    real::gemm(m, k, n, 1.0, &a, real::Layout::row_major(k), &b, real::Layout::row_major(n), 0.0, &mut c, real::Layout::row_major(n));
    for i in 0..m {
        for j in 0..n {
            let s: f64 = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
            assert!((c[i * n + j] - s).abs() < 1e-12);
        }
    }
}
