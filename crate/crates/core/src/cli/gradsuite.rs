//! Finite-difference checks of the three trained objectives, in f64.

use serde::{Deserialize, Serialize};

use crate::lmcore::{LmConfig, TransformerLM, Vocab};
use crate::numcore::rng::stream_rng;
use crate::numcore::{grad_check, Graph, NumError, ParamId, Tensor, Var};
use crate::vqtok::{quantize, ProbeConfig, ProbeModel, VqConfig, VqModel};

pub const TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradResult {
    pub name: String,
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
    /// Largest difference between the true-loss gradient and the surrogate
    /// gradient (zero where no surrogate is involved).
    pub surrogate_gap: f64,
}

impl GradResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE && self.surrogate_gap < 1e-9 && self.checked > 0
    }
}

fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    use rand::Rng as _;
    let mut r = stream_rng(seed, "gradsuite", 0);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).expect("shape")
}

/// One pre-norm transformer block with the output head, under masked cross-entropy.
pub fn transformer_block(seed: u64) -> Result<GradResult, NumError> {
    let cfg = LmConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, context: 12, init_std: 0.4 };
    let mut m = TransformerLM::<f64>::new(cfg, Vocab::build(["a b c d e f g h"]), seed);
    m.expand_vocab(4, seed + 1).map_err(|e| NumError::Config(e.to_string()))?;
    // Perturb norms and biases away from their trivial init.
    for p in m.params.iter_mut() {
        if p.name.contains(".b") || p.name.contains(".g") {
            let noise = random_tensor(p.value.shape(), seed + p.value.len() as u64, -0.3, 0.3);
            p.value.add_assign(&noise);
        }
    }
    let v = m.vocab_size();
    let seqs: [Vec<usize>; 2] = [vec![3, 5, 1, 9, 4, 12], vec![7, 2, 8, 14, 6]];
    let targets: Vec<usize> = seqs.iter().flat_map(|s| s.iter().map(|&t| (t * 5 + 3) % v)).collect();
    let weights: Vec<f64> = (0..targets.len()).map(|i| if i % 3 == 1 { 0.0 } else { 1.0 }).collect();
    let model = m.clone();
    let loss = |g: &mut Graph<'_, f64>| -> Var {
        let refs: Vec<&[usize]> = seqs.iter().map(|s| s.as_slice()).collect();
        let logits = model.forward_packed(g, &refs).expect("fits context");
        g.cross_entropy(logits, &targets, &weights)
    };
    let rep = grad_check(&mut m.params, loss, EPS, 6, seed, &[])?;
    Ok(GradResult { name: "transformer+ce".into(), max_rel_err: rep.max_rel_err, worst: rep.worst_param, checked: rep.checked, surrogate_gap: 0.0 })
}

struct Frozen {
    indices: Vec<usize>,
    zq: Tensor<f64>,
    offset: Tensor<f64>,
    ze: Tensor<f64>,
    sign: Tensor<f64>,
}

/// The tokenizer objective with quantization replaced by a fixed additive
/// offset (`z_q − z_e` at the base point), fixed code assignments and the
/// stop-gradient latents held at their base values. The L1 residual signs are
/// fixed too, so the surrogate is smooth at the base point. Its exact gradient equals
/// the straight-through gradient of the real loss.
fn surrogate(m: &VqModel<f64>, g: &mut Graph<'_, f64>, images: &Tensor<f64>, probe: Option<&ProbeModel<f64>>, fz: &Frozen) -> Var {
    let cfg = &m.cfg;
    let b = images.shape()[0];
    let gs = cfg.grid();
    let rows = b * gs * gs;
    let numel = (rows * cfg.n_z) as f64;
    let x = g.constant(images.clone());
    let ze4 = m.encoder(g, x);
    let ze = g.reshape(ze4, &[rows, cfg.n_z]);
    let table = g.param(m.codebook);
    let e = g.embedding(table, &fz.indices);
    let ze_sg = g.constant(fz.ze.clone());
    let d = g.sub(ze_sg, e);
    let cb = g.sum_squares(d);
    let cb = g.scale(cb, 1.0 / numel);
    let zq = g.constant(fz.zq.clone());
    let d = g.sub(ze, zq);
    let cm = g.sum_squares(d);
    let cm = g.scale(cm, cfg.beta / numel);
    let off = g.constant(fz.offset.clone());
    let zst = g.add(ze, off);
    let zst = g.reshape(zst, &[b, gs, gs, cfg.n_z]);
    let xhat = m.decoder(g, zst);
    let diff = g.sub(xhat, x);
    let sign = g.constant(fz.sign.clone());
    let l1 = g.mul(diff, sign);
    let l1 = g.sum(l1);
    let l1 = g.scale(l1, 1.0 / images.len() as f64);
    let mut total = g.add(l1, cb);
    total = g.add(total, cm);
    if let Some(p) = probe {
        let (fx, _) = p.forward(g, x, true);
        let fx = g.detach(fx);
        let (fh, _) = p.forward(g, xhat, true);
        let d = g.sub(fh, fx);
        let s = g.sum_squares(d);
        let c = g.scale(s, cfg.cip_weight / b as f64);
        total = g.add(total, c);
    }
    total
}

fn vq_case(name: &str, with_probe: bool, seed: u64) -> Result<GradResult, NumError> {
    let cfg = VqConfig { image_size: 8, channels: [2, 3], k_img: 6, n_z: 3, beta: 0.25, cip_weight: 100.0 };
    let mut m = VqModel::<f64>::new(cfg.clone(), seed);
    // Spread the codebook so assignments are well separated.
    let cb = random_tensor(&[cfg.k_img, cfg.n_z], seed + 7, -0.6, 0.6);
    *m.params.value_mut(m.codebook) = cb;
    let probe = with_probe.then(|| ProbeModel::<f64>::new(ProbeConfig { image_size: 8, channels: [2, 3], d_f: 4 }, seed + 3));
    let images = random_tensor(&[2, 8, 8, 1], seed + 11, 0.05, 0.95);

    let rows = 2 * cfg.grid() * cfg.grid();
    let (real_grads, fz) = {
        let mut g = Graph::with_params(&m.params);
        let lv = m.loss(&mut g, &images, probe.as_ref());
        let grads = g.backward(lv.total);
        let ze: Vec<f64> = lv.latents.clone();
        let (idx, zq) = quantize(&ze, m.params.value(m.codebook).data(), cfg.n_z);
        assert_eq!(idx, lv.indices);
        let offset: Vec<f64> = zq.iter().zip(&ze).map(|(q, e)| q - e).collect();
        let gs = cfg.grid();
        let zq_in = g.constant(Tensor::from_vec(&[2, gs, gs, cfg.n_z], zq.clone()).expect("shape"));
        let xhat = m.decoder(&mut g, zq_in);
        let sign: Vec<f64> = g.value(xhat).data().iter().zip(images.data()).map(|(a, b)| (a - b).signum()).collect();
        let fz = Frozen {
            indices: idx,
            zq: Tensor::from_vec(&[rows, cfg.n_z], zq).expect("shape"),
            offset: Tensor::from_vec(&[rows, cfg.n_z], offset).expect("shape"),
            ze: Tensor::from_vec(&[rows, cfg.n_z], ze).expect("shape"),
            sign: Tensor::from_vec(images.shape(), sign).expect("shape"),
        };
        let per: Vec<Option<Vec<f64>>> = (0..m.params.len()).map(|i| grads.param(ParamId(i)).map(|t| t.data().to_vec())).collect();
        (per, fz)
    };
    let mut gap: f64 = 0.0;
    {
        let mut g = Graph::with_params(&m.params);
        let l = surrogate(&m, &mut g, &images, probe.as_ref(), &fz);
        let grads = g.backward(l);
        for (i, real) in real_grads.iter().enumerate() {
            let sur = grads.param(ParamId(i)).map(|t| t.data().to_vec());
            match (real, sur) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.iter().zip(&b) {
                        gap = gap.max((x - y).abs() / x.abs().max(1.0));
                    }
                }
                (None, None) => {}
                _ => gap = f64::INFINITY,
            }
        }
    }
    let model = m.clone();
    let loss = |g: &mut Graph<'_, f64>| surrogate(&model, g, &images, probe.as_ref(), &fz);
    let rep = grad_check(&mut m.params, loss, EPS, 8, seed, &[])?;
    Ok(GradResult { name: name.into(), max_rel_err: rep.max_rel_err, worst: rep.worst_param, checked: rep.checked, surrogate_gap: gap })
}

/// Encoder, codebook and decoder gradients of the tokenizer loss, including
/// the straight-through path.
pub fn vq_losses(seed: u64) -> Result<GradResult, NumError> {
    vq_case("vq (straight-through)", false, seed)
}

/// The same objective with the probe-feature term added at weight 100.
pub fn cip(seed: u64) -> Result<GradResult, NumError> {
    vq_case("vq + cip", true, seed)
}

pub fn run_all(seed: u64) -> Result<Vec<GradResult>, NumError> {
    Ok(vec![transformer_block(seed)?, vq_losses(seed)?, cip(seed)?])
}
