//! Incremental inference with a key/value cache, and the sampler.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::TransformerLM;
use super::vocab::{EOS, PAD, UNK};
use super::LmError;
use crate::numcore::kernels::{gelu, layer_norm, linear, softmax_in_place};
use crate::numcore::rng::rng_from;
use crate::numcore::Real;

/// Per-layer cached keys and values, `len × d_model` each.
pub struct KvCache<T> {
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    len: usize,
}

impl<T: Real> KvCache<T> {
    pub fn new(layers: usize) -> Self {
        KvCache { k: vec![Vec::new(); layers], v: vec![Vec::new(); layers], len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<T: Real> TransformerLM<T> {
    /// Feeds `ids` after the cached prefix and returns logits `[ids.len() × V]`.
    pub fn extend(&self, cache: &mut KvCache<T>, ids: &[usize]) -> Result<Vec<T>, LmError> {
        let n = ids.len();
        let (d, heads, ff) = (self.cfg.d_model, self.cfg.n_heads, self.cfg.d_ff);
        let dh = d / heads;
        let start = cache.len;
        if start + n > self.cfg.context {
            return Err(LmError::ContextOverflow { len: start + n, max: self.cfg.context });
        }
        let p = &self.params;
        let te = p.value(self.tok_emb);
        let pe = p.value(self.pos_emb);
        let mut x = vec![T::zero(); n * d];
        for (i, &id) in ids.iter().enumerate() {
            if id >= self.vocab_size() {
                return Err(LmError::Config(format!("token id {id} outside vocabulary")));
            }
            for j in 0..d {
                x[i * d + j] = te.row(id)[j] + pe.row(start + i)[j];
            }
        }
        let mut h = vec![T::zero(); n * d];
        let mut qkv = vec![T::zero(); n * 3 * d];
        let mut att = vec![T::zero(); n * d];
        let mut o = vec![T::zero(); n * d];
        let mut f1 = vec![T::zero(); n * ff];
        let scale = T::one() / T::f(dh as f64).sqrt();
        for (l, blk) in self.blocks.iter().enumerate() {
            layer_norm(&x, d, p.value(blk.ln1_g).data(), p.value(blk.ln1_b).data(), &mut h);
            linear(&h, n, p.value(blk.qkv_w).data(), d, 3 * d, Some(p.value(blk.qkv_b).data()), &mut qkv);
            for i in 0..n {
                cache.k[l].extend_from_slice(&qkv[i * 3 * d + d..i * 3 * d + 2 * d]);
                cache.v[l].extend_from_slice(&qkv[i * 3 * d + 2 * d..(i + 1) * 3 * d]);
            }
            let (kc, vc) = (&cache.k[l], &cache.v[l]);
            for i in 0..n {
                let pos = start + i;
                for hd in 0..heads {
                    let q = &qkv[i * 3 * d + hd * dh..i * 3 * d + (hd + 1) * dh];
                    let mut s: Vec<T> = (0..=pos)
                        .map(|t| q.iter().zip(&kc[t * d + hd * dh..t * d + (hd + 1) * dh]).map(|(&a, &b)| a * b).sum::<T>() * scale)
                        .collect();
                    softmax_in_place(&mut s);
                    let out = &mut att[i * d + hd * dh..i * d + (hd + 1) * dh];
                    out.iter_mut().for_each(|v| *v = T::zero());
                    for (t, &w) in s.iter().enumerate() {
                        for (ov, &vv) in out.iter_mut().zip(&vc[t * d + hd * dh..t * d + (hd + 1) * dh]) {
                            *ov += w * vv;
                        }
                    }
                }
            }
            linear(&att, n, p.value(blk.out_w).data(), d, d, Some(p.value(blk.out_b).data()), &mut o);
            x.iter_mut().zip(&o).for_each(|(a, &b)| *a += b);
            layer_norm(&x, d, p.value(blk.ln2_g).data(), p.value(blk.ln2_b).data(), &mut h);
            linear(&h, n, p.value(blk.fc1_w).data(), d, ff, Some(p.value(blk.fc1_b).data()), &mut f1);
            f1.iter_mut().for_each(|v| *v = gelu(*v));
            linear(&f1, n, p.value(blk.fc2_w).data(), ff, d, Some(p.value(blk.fc2_b).data()), &mut o);
            x.iter_mut().zip(&o).for_each(|(a, &b)| *a += b);
        }
        cache.len += n;
        layer_norm(&x, d, p.value(self.lnf_g).data(), p.value(self.lnf_b).data(), &mut h);
        let v = self.vocab_size();
        let mut logits = vec![T::zero(); n * v];
        linear(&h, n, p.value(self.head).data(), d, v, None, &mut logits);
        Ok(logits)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SampleMode {
    Greedy,
    Temperature { temperature: f64 },
    TopK { k: usize, temperature: f64 },
}

/// Which token ids a response may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Constraint {
    None,
    /// Image ids and PAD/UNK masked out.
    TextOnly,
    /// `<`, exactly `d_z` image ids, `>`, EOS.
    Image { d_z: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: SampleMode,
    pub max_new_tokens: usize,
    pub constraint: Constraint,
}

impl SamplerConfig {
    pub fn greedy(max_new_tokens: usize, constraint: Constraint) -> Self {
        SamplerConfig { mode: SampleMode::Greedy, max_new_tokens, constraint }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    EndMarker,
    MaxTokens,
    Context,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generation {
    /// New ids, without the terminating EOS / end marker.
    pub ids: Vec<usize>,
    pub stop: StopReason,
}

/// Lowest index among the maxima.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn pick<T: Real>(row: &[T], mode: SampleMode, rng: &mut crate::numcore::rng::Rng) -> usize {
    let (k, temp) = match mode {
        SampleMode::Greedy => return argmax(row),
        SampleMode::Temperature { temperature } => (row.len(), temperature),
        SampleMode::TopK { k, temperature } => (k.max(1), temperature),
    };
    if k == 1 {
        return argmax(row);
    }
    let mut order: Vec<usize> = (0..row.len()).filter(|&i| row[i].as_f64() > f64::NEG_INFINITY).collect();
    order.sort_by(|&a, &b| row[b].as_f64().total_cmp(&row[a].as_f64()).then(a.cmp(&b)));
    order.truncate(k);
    let mut p: Vec<f64> = order.iter().map(|&i| row[i].as_f64() / temp.max(1e-8)).collect();
    softmax_in_place(&mut p);
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (j, &pj) in p.iter().enumerate() {
        acc += pj;
        if u < acc {
            return order[j];
        }
    }
    *order.last().expect("non-empty")
}

impl<T: Real> TransformerLM<T> {
    /// Continues `prompt`. Stops at EOS, at the "### End" marker, or at the token budget.
    pub fn sample(&self, prompt: &[usize], cfg: &SamplerConfig, seed: u64) -> Result<Generation, LmError> {
        if prompt.is_empty() {
            return Err(LmError::Config("empty prompt".into()));
        }
        if prompt.len() >= self.cfg.context {
            return Err(LmError::ContextOverflow { len: prompt.len(), max: self.cfg.context });
        }
        let mut rng = rng_from(seed);
        let vocab = &self.vocab;
        let (k_text, total) = (vocab.k_text(), vocab.total());
        let end_marker: Vec<usize> = ["###", "End"].iter().filter_map(|w| vocab.id(w)).collect();
        let lt = vocab.id("<");
        let gt = vocab.id(">");
        let mut cache = KvCache::new(self.blocks.len());
        let mut logits = self.extend(&mut cache, prompt)?;
        let v = self.vocab_size();
        let mut out: Vec<usize> = Vec::new();
        let stop = loop {
            if out.len() >= cfg.max_new_tokens {
                break StopReason::MaxTokens;
            }
            let rows = logits.len() / v;
            let mut row: Vec<T> = logits[(rows - 1) * v..].to_vec();
            let forced = match cfg.constraint {
                Constraint::Image { d_z } => match out.len() {
                    0 => lt,
                    n if n == d_z + 1 => gt,
                    n if n == d_z + 2 => Some(EOS),
                    _ => None,
                },
                _ => None,
            };
            let next = match forced {
                Some(id) => id,
                None => {
                    match cfg.constraint {
                        Constraint::Image { .. } => row[..k_text].iter_mut().for_each(|x| *x = T::neg_infinity()),
                        Constraint::TextOnly => {
                            row[k_text..total].iter_mut().for_each(|x| *x = T::neg_infinity());
                            row[PAD] = T::neg_infinity();
                            row[UNK] = T::neg_infinity();
                        }
                        Constraint::None => {}
                    }
                    pick(&row, cfg.mode, &mut rng)
                }
            };
            if next == EOS {
                break StopReason::Eos;
            }
            out.push(next);
            if !end_marker.is_empty() && out.ends_with(&end_marker) {
                out.truncate(out.len() - end_marker.len());
                break StopReason::EndMarker;
            }
            if cache.len() >= self.cfg.context {
                break StopReason::Context;
            }
            logits = self.extend(&mut cache, &[next])?;
        };
        Ok(Generation { ids: out, stop })
    }
}
