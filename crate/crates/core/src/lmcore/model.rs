//! Pre-norm causal transformer with learned positions and an untied output head.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use super::LmError;
use crate::checkpoint::Checkpoint;
use crate::numcore::rng::{stream_rng, Rng};
use crate::numcore::{Graph, ParamId, ParamSet, Real, Segment, Tensor, Var};

pub const LM_MAGIC: &[u8; 4] = b"LMC1";
pub const EXPAND_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context: usize,
    pub init_std: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { d_model: 128, n_layers: 4, n_heads: 4, d_ff: 512, context: 320, init_std: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub qkv_w: ParamId,
    pub qkv_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
}

/// Record of the embedding expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expansion {
    pub k_text: usize,
    pub k_img: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLM<T: Real = f32> {
    pub cfg: LmConfig,
    pub vocab: Vocab,
    pub params: ParamSet<T>,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub blocks: Vec<Block>,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
    /// `[d_model × vocab]`, no bias.
    pub head: ParamId,
    pub expansion: Option<Expansion>,
    pub init_seed: u64,
}

fn normal<T: Real>(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::f(dist.sample(rng))).collect()).expect("shape")
}

impl<T: Real> TransformerLM<T> {
    /// Fresh model over `vocab` (text and any image tokens it already has).
    pub fn new(cfg: LmConfig, vocab: Vocab, seed: u64) -> Self {
        assert_eq!(cfg.d_model % cfg.n_heads, 0, "heads must divide d_model");
        let mut rng = stream_rng(seed, "lm-init", 0);
        let mut p = ParamSet::new();
        let (d, v, std) = (cfg.d_model, vocab.total(), cfg.init_std);
        let proj_std = std / (2.0 * cfg.n_layers as f64).sqrt();
        let add = |p: &mut ParamSet<T>, name: &str, t: Tensor<T>| p.add(name, t).expect("unique name");
        let tok_emb = add(&mut p, "tok_emb", normal(&mut rng, &[v, d], std));
        let pos_emb = add(&mut p, "pos_emb", normal(&mut rng, &[cfg.context, d], std));
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let n = |s: &str| format!("block{l}.{s}");
            blocks.push(Block {
                ln1_g: add(&mut p, &n("ln1.g"), Tensor::filled(&[d], T::one())),
                ln1_b: add(&mut p, &n("ln1.b"), Tensor::zeros(&[d])),
                qkv_w: add(&mut p, &n("attn.qkv.w"), normal(&mut rng, &[d, 3 * d], std)),
                qkv_b: add(&mut p, &n("attn.qkv.b"), Tensor::zeros(&[3 * d])),
                out_w: add(&mut p, &n("attn.out.w"), normal(&mut rng, &[d, d], proj_std)),
                out_b: add(&mut p, &n("attn.out.b"), Tensor::zeros(&[d])),
                ln2_g: add(&mut p, &n("ln2.g"), Tensor::filled(&[d], T::one())),
                ln2_b: add(&mut p, &n("ln2.b"), Tensor::zeros(&[d])),
                fc1_w: add(&mut p, &n("mlp.fc1.w"), normal(&mut rng, &[d, cfg.d_ff], std)),
                fc1_b: add(&mut p, &n("mlp.fc1.b"), Tensor::zeros(&[cfg.d_ff])),
                fc2_w: add(&mut p, &n("mlp.fc2.w"), normal(&mut rng, &[cfg.d_ff, d], proj_std)),
                fc2_b: add(&mut p, &n("mlp.fc2.b"), Tensor::zeros(&[d])),
            });
        }
        let lnf_g = add(&mut p, "lnf.g", Tensor::filled(&[d], T::one()));
        let lnf_b = add(&mut p, "lnf.b", Tensor::zeros(&[d]));
        let head = add(&mut p, "head.w", normal(&mut rng, &[d, v], std));
        TransformerLM { cfg, vocab, params: p, tok_emb, pos_emb, blocks, lnf_g, lnf_b, head, expansion: None, init_seed: seed }
    }

    pub fn vocab_size(&self) -> usize {
        self.params.value(self.head).shape()[1]
    }

    /// Logits `[N × V]` for sequences packed back to back (each starts at position 0).
    pub fn forward_packed(&self, g: &mut Graph<T>, seqs: &[&[usize]]) -> Result<Var, LmError> {
        let mut ids = Vec::new();
        let mut pos = Vec::new();
        let mut segs = Vec::with_capacity(seqs.len());
        for s in seqs {
            if s.len() > self.cfg.context {
                return Err(LmError::ContextOverflow { len: s.len(), max: self.cfg.context });
            }
            if let Some(&bad) = s.iter().find(|&&i| i >= self.vocab_size()) {
                return Err(LmError::Config(format!("token id {bad} outside vocabulary of {}", self.vocab_size())));
            }
            segs.push(Segment { start: ids.len(), len: s.len() });
            ids.extend_from_slice(s);
            pos.extend(0..s.len());
        }
        let te = g.param(self.tok_emb);
        let pe = g.param(self.pos_emb);
        let a = g.embedding(te, &ids);
        let b = g.embedding(pe, &pos);
        let mut x = g.add(a, b);
        for blk in &self.blocks {
            let (g1, b1) = (g.param(blk.ln1_g), g.param(blk.ln1_b));
            let h = g.layer_norm(x, g1, b1);
            let (w, bb) = (g.param(blk.qkv_w), g.param(blk.qkv_b));
            let qkv = g.linear(h, w, Some(bb));
            let att = g.causal_attention(qkv, self.cfg.n_heads, &segs);
            let (w, bb) = (g.param(blk.out_w), g.param(blk.out_b));
            let o = g.linear(att, w, Some(bb));
            x = g.add(x, o);
            let (g2, b2) = (g.param(blk.ln2_g), g.param(blk.ln2_b));
            let h = g.layer_norm(x, g2, b2);
            let (w, bb) = (g.param(blk.fc1_w), g.param(blk.fc1_b));
            let h = g.linear(h, w, Some(bb));
            let h = g.gelu(h);
            let (w, bb) = (g.param(blk.fc2_w), g.param(blk.fc2_b));
            let h = g.linear(h, w, Some(bb));
            x = g.add(x, h);
        }
        let (gf, bf) = (g.param(self.lnf_g), g.param(self.lnf_b));
        let x = g.layer_norm(x, gf, bf);
        let w = g.param(self.head);
        Ok(g.matmul(x, w))
    }

    /// Logits `[T × V]` for one sequence.
    pub fn forward(&self, ids: &[usize]) -> Result<Tensor<T>, LmError> {
        let mut g = Graph::with_params(&self.params);
        let l = self.forward_packed(&mut g, &[ids])?;
        Ok(g.value(l).clone())
    }

    /// Σ_t log p(ids[t+1] | ids[..=t]).
    pub fn sequence_log_prob(&self, ids: &[usize]) -> Result<f64, LmError> {
        let logits = self.forward(ids)?;
        let mut s = 0.0;
        for t in 0..ids.len().saturating_sub(1) {
            let row = logits.row(t);
            s += (row[ids[t + 1]] - crate::numcore::kernels::log_sum_exp(row)).as_f64();
        }
        Ok(s)
    }

    /// Appends `k_img` rows to the token embedding and `k_img` columns to the
    /// output head, drawn from N(0, 0.02²). Existing entries are untouched.
    pub fn expand_vocab(&mut self, k_img: usize, seed: u64) -> Result<(), LmError> {
        if self.vocab.k_img != 0 {
            return Err(LmError::Config("vocabulary already expanded".into()));
        }
        let k_text = self.vocab.k_text();
        let d = self.cfg.d_model;
        let mut rng = stream_rng(seed, "expand-vocab", 0);
        let new_rows: Tensor<T> = normal(&mut rng, &[k_img, d], EXPAND_STD);
        let new_cols: Tensor<T> = normal(&mut rng, &[d, k_img], EXPAND_STD);
        let old = self.params.value(self.tok_emb);
        let mut emb = old.data().to_vec();
        emb.extend_from_slice(new_rows.data());
        let emb = Tensor::from_vec(&[k_text + k_img, d], emb).expect("shape");
        let old = self.params.value(self.head);
        let v = old.shape()[1];
        let mut head = Vec::with_capacity(d * (v + k_img));
        for r in 0..d {
            head.extend_from_slice(old.row(r));
            head.extend_from_slice(new_cols.row(r));
        }
        let head = Tensor::from_vec(&[d, v + k_img], head).expect("shape");
        self.params.replace(self.tok_emb, emb);
        self.params.replace(self.head, head);
        self.vocab = self.vocab.with_images(k_img);
        self.expansion = Some(Expansion { k_text, k_img, seed });
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> TransformerLM<U> {
        TransformerLM {
            cfg: self.cfg.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            tok_emb: self.tok_emb,
            pos_emb: self.pos_emb,
            blocks: self.blocks.clone(),
            lnf_g: self.lnf_g,
            lnf_b: self.lnf_b,
            head: self.head,
            expansion: self.expansion,
            init_seed: self.init_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LmMeta {
    config: LmConfig,
    vocab_text: Vec<String>,
    k_img: usize,
    expansion: Option<Expansion>,
    init_seed: u64,
    extra: serde_json::Value,
}

impl TransformerLM<f32> {
    /// Checkpoint with the model parameters and caller-supplied metadata.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let meta = LmMeta {
            config: self.cfg.clone(),
            vocab_text: self.vocab.text.clone(),
            k_img: self.vocab.k_img,
            expansion: self.expansion,
            init_seed: self.init_seed,
            extra,
        };
        let mut ck = Checkpoint::new(serde_json::to_value(meta).expect("meta serializes"));
        ck.push_params("params", &self.params);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, serde_json::Value), LmError> {
        let meta: LmMeta = serde_json::from_value(ck.meta.clone()).map_err(|e| LmError::Config(e.to_string()))?;
        let text_vocab = Vocab::from_tokens(meta.vocab_text, 0);
        let mut m = TransformerLM::new(meta.config, text_vocab, meta.init_seed);
        if let Some(e) = meta.expansion {
            m.expand_vocab(e.k_img, e.seed)?;
        } else if meta.k_img > 0 {
            return Err(LmError::Config("image tokens without an expansion record".into()));
        }
        ck.load_params("params", &mut m.params)?;
        Ok((m, meta.extra))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<String, LmError> {
        Ok(self.to_checkpoint(serde_json::Value::Null).save(path, LM_MAGIC)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LmError> {
        let ck = Checkpoint::load(path, LM_MAGIC)?;
        Ok(Self::from_checkpoint(&ck)?.0)
    }
}
