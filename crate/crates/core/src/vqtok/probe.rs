//! Frozen convolutional classifier whose penultimate features drive the
//! clinical-information loss, FID and generated-image scoring.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{add_conv, add_dense, conv, dense, image_batch, ConvLayer, DenseLayer};
use super::VqError;
use crate::checkpoint::{content_hash, Checkpoint};
use crate::numcore::rng::stream_rng;
use crate::numcore::{Graph, ParamSet, Real, Var};
use crate::synthcorpus::{Image, Kind};

pub const PROBE_MAGIC: &[u8; 4] = b"PRB1";
pub const N_CLASSES: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub image_size: usize,
    pub channels: [usize; 2],
    pub d_f: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { image_size: 32, channels: [16, 32], d_f: 64 }
    }
}

impl ProbeConfig {
    fn flat(&self) -> usize {
        let s = self.image_size / 8;
        s * s * self.channels[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel<T: Real = f32> {
    pub cfg: ProbeConfig,
    pub params: ParamSet<T>,
    convs: [ConvLayer; 3],
    feat: DenseLayer,
    head: DenseLayer,
}

impl<T: Real> ProbeModel<T> {
    pub fn new(cfg: ProbeConfig, seed: u64) -> Self {
        assert!(cfg.image_size % 8 == 0, "probe needs image size divisible by 8");
        let mut rng = stream_rng(seed, "probe-init", 0);
        let mut params = ParamSet::new();
        let [c0, c1] = cfg.channels;
        let convs = [
            add_conv(&mut params, "probe.conv1", 1, c0, 2, &mut rng),
            add_conv(&mut params, "probe.conv2", c0, c1, 2, &mut rng),
            add_conv(&mut params, "probe.conv3", c1, c1, 2, &mut rng),
        ];
        let feat = add_dense(&mut params, "probe.feat", cfg.flat(), cfg.d_f, &mut rng);
        let head = add_dense(&mut params, "probe.head", cfg.d_f, N_CLASSES, &mut rng);
        ProbeModel { cfg, params, convs, feat, head }
    }

    /// `(features [B × d_f], logits [B × 6])` for an NHWC batch node.
    /// With `frozen`, weights enter the graph as constants.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, frozen: bool) -> (Var, Var) {
        let mut h = x;
        for l in &self.convs {
            h = conv(g, &self.params, l, h, frozen);
            h = g.gelu(h);
        }
        let b = g.value(h).shape()[0];
        h = g.reshape(h, &[b, self.cfg.flat()]);
        let f = dense(g, &self.params, &self.feat, h, frozen);
        let f = g.tanh(f);
        let logits = dense(g, &self.params, &self.head, f, frozen);
        (f, logits)
    }

    fn eval_batches(&self, images: &[&Image], want_logits: bool) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let mut g = Graph::with_params(&self.params);
            let x = g.constant(image_batch(chunk));
            let (f, l) = self.forward(&mut g, x, false);
            let t = g.value(if want_logits { l } else { f });
            out.extend(t.data().chunks_exact(t.cols()).map(|r| r.iter().map(|v| v.as_f64()).collect()));
        }
        out
    }

    pub fn features(&self, images: &[&Image]) -> Vec<Vec<f64>> {
        self.eval_batches(images, false)
    }

    /// Per-kind logits in [`Kind::index`] order.
    pub fn logits(&self, images: &[&Image]) -> Vec<Vec<f64>> {
        self.eval_batches(images, true)
    }
}

/// Multi-hot presence targets over the 6 kinds.
pub fn presence_targets(kinds: &[Kind]) -> [f64; N_CLASSES] {
    let mut t = [0.0; N_CLASSES];
    for k in kinds {
        t[k.index()] = 1.0;
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ProbeMeta {
    config: ProbeConfig,
    seed: u64,
    n_params: usize,
}

impl ProbeModel<f32> {
    /// Writes the checkpoint and returns its content hash.
    pub fn save(&self, path: &Path, seed: u64) -> Result<String, VqError> {
        let meta = ProbeMeta { config: self.cfg.clone(), seed, n_params: self.params.numel() };
        let mut ck = Checkpoint::new(serde_json::to_value(meta).expect("meta serializes"));
        ck.push_params("params", &self.params);
        Ok(ck.save(path, PROBE_MAGIC)?)
    }

    pub fn hash(&self) -> String {
        let mut ck = Checkpoint::new(serde_json::Value::Null);
        ck.push_params("params", &self.params);
        content_hash(&ck.to_bytes(PROBE_MAGIC))
    }

    pub fn load(path: &Path) -> Result<Self, VqError> {
        let ck = Checkpoint::load(path, PROBE_MAGIC)?;
        let meta: ProbeMeta = serde_json::from_value(ck.meta.clone()).map_err(|e| VqError::Config(e.to_string()))?;
        let mut m = ProbeModel::new(meta.config, meta.seed);
        ck.load_params("params", &mut m.params)?;
        Ok(m)
    }
}
