//! Encoder, codebook and decoder of the image tokenizer.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::{add_conv, batch_images, conv, image_batch, ConvLayer};
use super::probe::ProbeModel;
use super::quantize::quantize;
use super::VqError;
use crate::checkpoint::Checkpoint;
use crate::numcore::rng::stream_rng;
use crate::numcore::{Graph, ParamId, ParamSet, Real, Tensor, Var};
use crate::synthcorpus::Image;

pub const VQ_MAGIC: &[u8; 4] = b"VQT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqConfig {
    pub image_size: usize,
    pub channels: [usize; 2],
    pub k_img: usize,
    pub n_z: usize,
    pub beta: f64,
    pub cip_weight: f64,
}

impl Default for VqConfig {
    fn default() -> Self {
        VqConfig { image_size: 32, channels: [16, 32], k_img: 128, n_z: 32, beta: 0.25, cip_weight: 100.0 }
    }
}

impl VqConfig {
    /// Latent grid side (image side / 4).
    pub fn grid(&self) -> usize {
        self.image_size / 4
    }

    /// Tokens per image.
    pub fn d_z(&self) -> usize {
        self.grid() * self.grid()
    }
}

/// A tokenized image: `d_z` codebook indices in raster order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageTokens(pub Vec<usize>);

#[derive(Clone, Debug, PartialEq)]
pub struct VqModel<T: Real = f32> {
    pub cfg: VqConfig,
    pub params: ParamSet<T>,
    enc: [ConvLayer; 3],
    dec: [ConvLayer; 4],
    pub codebook: ParamId,
}

/// Loss nodes of one tokenizer training batch.
pub struct VqLossVars {
    pub total: Var,
    pub l1: Var,
    pub codebook: Var,
    pub commit: Var,
    pub cip: Option<Var>,
    pub indices: Vec<usize>,
    pub latents: Vec<f64>,
}

impl<T: Real> VqModel<T> {
    pub fn new(cfg: VqConfig, seed: u64) -> Self {
        assert!(cfg.image_size % 4 == 0, "tokenizer needs image size divisible by 4");
        let mut rng = stream_rng(seed, "vq-init", 0);
        let mut params = ParamSet::new();
        let [c0, c1] = cfg.channels;
        let nz = cfg.n_z;
        let enc = [
            add_conv(&mut params, "enc.conv1", 1, c0, 2, &mut rng),
            add_conv(&mut params, "enc.conv2", c0, c1, 2, &mut rng),
            add_conv(&mut params, "enc.conv3", c1, nz, 1, &mut rng),
        ];
        let bound = 1.0 / cfg.k_img as f64;
        let cb: Vec<T> = (0..cfg.k_img * nz).map(|_| T::f(rng.random_range(-bound..bound))).collect();
        let codebook = params.add("codebook", Tensor::from_vec(&[cfg.k_img, nz], cb).expect("shape")).expect("unique");
        let dec = [
            add_conv(&mut params, "dec.conv1", nz, c1, 1, &mut rng),
            add_conv(&mut params, "dec.conv2", c1, c0, 1, &mut rng),
            add_conv(&mut params, "dec.conv3", c0, c0, 1, &mut rng),
            add_conv(&mut params, "dec.conv4", c0, 1, 1, &mut rng),
        ];
        VqModel { cfg, params, enc, dec, codebook }
    }

    /// `(encoder params, decoder params)` element counts.
    pub fn param_counts(&self) -> (usize, usize) {
        let count = |ls: &[ConvLayer]| -> usize {
            ls.iter().map(|l| self.params.value(l.w).len() + self.params.value(l.b).len()).sum()
        };
        (count(&self.enc), count(&self.dec))
    }

    /// Continuous latents `[B, g, g, n_z]`.
    pub fn encoder(&self, g: &mut Graph<T>, x: Var) -> Var {
        let mut h = conv(g, &self.params, &self.enc[0], x, false);
        h = g.gelu(h);
        h = conv(g, &self.params, &self.enc[1], h, false);
        h = g.gelu(h);
        conv(g, &self.params, &self.enc[2], h, false)
    }

    /// Images `[B, H, W, 1]` in (0, 1) from quantized latents `[B, g, g, n_z]`.
    pub fn decoder(&self, g: &mut Graph<T>, z: Var) -> Var {
        let mut h = conv(g, &self.params, &self.dec[0], z, false);
        h = g.gelu(h);
        h = g.upsample2(h);
        h = conv(g, &self.params, &self.dec[1], h, false);
        h = g.gelu(h);
        h = g.upsample2(h);
        h = conv(g, &self.params, &self.dec[2], h, false);
        h = g.gelu(h);
        h = conv(g, &self.params, &self.dec[3], h, false);
        g.sigmoid(h)
    }

    /// Full training objective for one batch:
    /// L1 + codebook + β·commitment (+ w·CIP when a probe is given).
    pub fn loss(&self, g: &mut Graph<T>, images: &Tensor<T>, probe: Option<&ProbeModel<T>>) -> VqLossVars {
        let cfg = &self.cfg;
        let b = images.shape()[0];
        let gs = cfg.grid();
        let x = g.constant(images.clone());
        let ze4 = self.encoder(g, x);
        let rows = b * gs * gs;
        let ze = g.reshape(ze4, &[rows, cfg.n_z]);
        let latents: Vec<f64> = g.value(ze).data().iter().map(|v| v.as_f64()).collect();
        let (indices, zq) = quantize(g.value(ze).data(), self.params.value(self.codebook).data(), cfg.n_z);
        let zq = Tensor::from_vec(&[rows, cfg.n_z], zq).expect("shape");
        let numel = T::f((rows * cfg.n_z) as f64);

        let table = g.param(self.codebook);
        let e = g.embedding(table, &indices);
        let ze_sg = g.detach(ze);
        let d_cb = g.sub(ze_sg, e);
        let cb = g.sum_squares(d_cb);
        let codebook = g.scale(cb, T::one() / numel);

        let zq_c = g.constant(zq.clone());
        let d_cm = g.sub(ze, zq_c);
        let cm = g.sum_squares(d_cm);
        let commit = g.scale(cm, T::f(cfg.beta) / numel);

        let zst = g.straight_through(ze, &zq);
        let zst = g.reshape(zst, &[b, gs, gs, cfg.n_z]);
        let xhat = self.decoder(g, zst);
        let diff = g.sub(xhat, x);
        let l1s = g.sum_abs(diff);
        let l1 = g.scale(l1s, T::one() / T::f(images.len() as f64));

        let mut total = g.add(l1, codebook);
        total = g.add(total, commit);
        let mut cip = None;
        if let Some(p) = probe {
            let (fx, _) = p.forward(g, x, true);
            let fx = g.detach(fx);
            let (fxh, _) = p.forward(g, xhat, true);
            let d = g.sub(fxh, fx);
            let s = g.sum_squares(d);
            let c = g.scale(s, T::one() / T::f(b as f64));
            let w = g.scale(c, T::f(cfg.cip_weight));
            total = g.add(total, w);
            cip = Some(c);
        }
        VqLossVars { total, l1, codebook, commit, cip, indices, latents }
    }

    fn check_image(&self, img: &Image) -> Result<(), VqError> {
        let s = self.cfg.image_size;
        if img.height != s || img.width != s {
            return Err(VqError::ImageShape { expected: s, height: img.height, width: img.width });
        }
        Ok(())
    }

    /// Token sequences for a set of images.
    pub fn encode(&self, images: &[&Image]) -> Result<Vec<ImageTokens>, VqError> {
        for img in images {
            self.check_image(img)?;
        }
        let d_z = self.cfg.d_z();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let mut g = Graph::with_params(&self.params);
            let x = g.constant(image_batch(chunk));
            let ze = self.encoder(&mut g, x);
            let (idx, _) = quantize(g.value(ze).data(), self.params.value(self.codebook).data(), self.cfg.n_z);
            out.extend(idx.chunks_exact(d_z).map(|c| ImageTokens(c.to_vec())));
        }
        Ok(out)
    }

    /// Images for token sequences; rejects out-of-range indices by position.
    pub fn decode(&self, tokens: &[ImageTokens]) -> Result<Vec<Image>, VqError> {
        let (d_z, k, nz, gs) = (self.cfg.d_z(), self.cfg.k_img, self.cfg.n_z, self.cfg.grid());
        for t in tokens {
            if t.0.len() != d_z {
                return Err(VqError::TokenCount { expected: d_z, got: t.0.len() });
            }
            if let Some(pos) = t.0.iter().position(|&i| i >= k) {
                return Err(VqError::TokenRange { position: pos, index: t.0[pos], k_img: k });
            }
        }
        let cb = self.params.value(self.codebook).data();
        let mut out = Vec::with_capacity(tokens.len());
        for chunk in tokens.chunks(64) {
            let mut z = Vec::with_capacity(chunk.len() * d_z * nz);
            for t in chunk {
                for &i in &t.0 {
                    z.extend_from_slice(&cb[i * nz..(i + 1) * nz]);
                }
            }
            let mut g = Graph::with_params(&self.params);
            let zv = g.constant(Tensor::from_vec(&[chunk.len(), gs, gs, nz], z).expect("shape"));
            let xhat = self.decoder(&mut g, zv);
            out.extend(batch_images(g.value(xhat)));
        }
        Ok(out)
    }

    pub fn reconstruct(&self, images: &[&Image]) -> Result<Vec<Image>, VqError> {
        self.decode(&self.encode(images)?)
    }
}

/// ‖f(x) − f(x̂)‖² for one pair of images under a frozen probe.
pub fn cip_loss(x: &Image, x_hat: &Image, probe: &ProbeModel<f32>) -> f64 {
    let f = probe.features(&[x, x_hat]);
    f[0].iter().zip(&f[1]).map(|(a, b)| (a - b).powi(2)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqMeta {
    pub config: VqConfig,
    pub seed: u64,
    pub probe_hash: Option<String>,
    pub encoder_params: usize,
    pub decoder_params: usize,
    pub cip_used: bool,
}

impl VqModel<f32> {
    pub fn save(&self, path: &Path, seed: u64, probe_hash: Option<String>, cip_used: bool) -> Result<String, VqError> {
        let (e, d) = self.param_counts();
        let meta = VqMeta { config: self.cfg.clone(), seed, probe_hash, encoder_params: e, decoder_params: d, cip_used };
        let mut ck = Checkpoint::new(serde_json::to_value(meta).expect("meta serializes"));
        ck.push_params("params", &self.params);
        Ok(ck.save(path, VQ_MAGIC)?)
    }

    pub fn load(path: &Path) -> Result<(Self, VqMeta), VqError> {
        let ck = Checkpoint::load(path, VQ_MAGIC)?;
        let meta: VqMeta = serde_json::from_value(ck.meta.clone()).map_err(|e| VqError::Config(e.to_string()))?;
        let mut m = VqModel::new(meta.config.clone(), meta.seed);
        ck.load_params("params", &mut m.params)?;
        Ok((m, meta))
    }
}
