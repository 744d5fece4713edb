//! Training loops for the probe classifier and the tokenizer.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::image_batch;
use super::model::VqModel;
use super::probe::{presence_targets, ProbeConfig, ProbeModel, N_CLASSES};
use super::quantize::usage;
use super::{VqConfig, VqError};
use crate::evalsuite::auroc;
use crate::numcore::rng::stream_rng;
use crate::numcore::{clip_grad_norm, AdamWConfig, AdamWState, Graph, Tensor};
use crate::synthcorpus::{Corpus, Image, Kind, StudyRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrainConfig {
    pub model: ProbeConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub min_train_records: usize,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        ProbeTrainConfig {
            model: ProbeConfig::default(),
            epochs: 12,
            batch_size: 32,
            lr: 2e-3,
            weight_decay: 1e-4,
            seed: 0,
            min_train_records: 500,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub epoch_loss: Vec<f64>,
    /// Held-out AUROC per kind name (kinds with one class in the test split omitted).
    pub test_auroc: Vec<(String, f64)>,
}

fn kinds_of(r: &StudyRecord) -> Vec<Kind> {
    r.findings.iter().map(|f| f.kind).collect()
}

/// Per-kind AUROC of probe logits against the records' findings.
pub fn probe_auroc(probe: &ProbeModel<f32>, images: &[&Image], kinds: &[Vec<Kind>]) -> Vec<(String, f64)> {
    let logits = probe.logits(images);
    Kind::ALL
        .iter()
        .filter_map(|&k| {
            let s: Vec<f64> = logits.iter().map(|l| l[k.index()]).collect();
            let t: Vec<bool> = kinds.iter().map(|ks| ks.contains(&k)).collect();
            auroc(&s, &t).map(|a| (k.name().to_string(), a))
        })
        .collect()
}

pub fn train_probe(corpus: &Corpus, cfg: &ProbeTrainConfig) -> Result<(ProbeModel<f32>, ProbeReport), VqError> {
    let train: Vec<&StudyRecord> = corpus.train().collect();
    if train.len() < cfg.min_train_records {
        return Err(VqError::Config(format!(
            "probe training needs at least {} train records, corpus has {}",
            cfg.min_train_records,
            train.len()
        )));
    }
    for k in Kind::ALL {
        if !train.iter().any(|r| r.findings.iter().any(|f| f.kind == k)) {
            return Err(VqError::MissingClass(k.name().to_string()));
        }
    }
    let mut model = ProbeModel::<f32>::new(cfg.model.clone(), cfg.seed);
    let hyper = AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() };
    let mut opt = AdamWState::new(&model.params, hyper);
    let mut report = ProbeReport::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.seed, "probe-epoch", epoch as u64));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let imgs: Vec<&Image> = chunk.iter().map(|&i| &train[i].image).collect();
            let targets: Vec<f32> = chunk
                .iter()
                .flat_map(|&i| presence_targets(&kinds_of(train[i])).map(|v| v as f32))
                .collect();
            let mut g = Graph::with_params(&model.params);
            let x = g.constant(image_batch(&imgs));
            let (_, logits) = model.forward(&mut g, x, false);
            let loss = g.bce_with_logits(logits, &targets, 1.0 / (chunk.len() * N_CLASSES) as f32);
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(VqError::NonFinite { what: "probe", step: opt.step });
            }
            let grads = g.backward(loss);
            drop(g);
            model.params.zero_grad();
            model.params.accumulate(&grads);
            clip_grad_norm(&mut model.params, 1.0);
            opt.step(&mut model.params).map_err(|e| VqError::Config(e.to_string()))?;
            total += lv;
            batches += 1;
        }
        report.epoch_loss.push(total / batches as f64);
        log::info!("probe epoch {epoch}: bce {:.4}", total / batches as f64);
    }
    let test: Vec<&StudyRecord> = corpus.test().collect();
    let imgs: Vec<&Image> = test.iter().map(|r| &r.image).collect();
    let kinds: Vec<Vec<Kind>> = test.iter().map(|r| kinds_of(r)).collect();
    if !imgs.is_empty() {
        report.test_auroc = probe_auroc(&model, &imgs, &kinds);
    }
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqTrainConfig {
    pub model: VqConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Include the clinical-information (probe feature) term.
    pub cip: bool,
    /// Replace codebook entries unused over `reinit_every` steps with random encoder outputs.
    pub reinit_dead: bool,
    pub reinit_every: usize,
    /// Warn when per-epoch usage entropy (nats) drops below this.
    pub entropy_floor: f64,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        VqTrainConfig {
            model: VqConfig::default(),
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            cip: true,
            reinit_dead: true,
            reinit_every: 50,
            entropy_floor: 2.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VqEpochLog {
    pub epoch: usize,
    pub total: f64,
    pub l1: f64,
    pub codebook: f64,
    pub commit: f64,
    pub cip: f64,
    pub usage_entropy: f64,
    pub used_entries: usize,
    pub reinitialized: usize,
    pub usage: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VqTrainLog {
    pub first_step_total: f64,
    pub epochs: Vec<VqEpochLog>,
}

/// Trains on every train-split image (both views).
pub fn train_vq(
    corpus: &Corpus,
    cfg: &VqTrainConfig,
    probe: Option<&ProbeModel<f32>>,
) -> Result<(VqModel<f32>, VqTrainLog), VqError> {
    let images: Vec<&Image> = corpus.train().map(|r| &r.image).collect();
    train_vq_images(&images, cfg, probe)
}

pub fn train_vq_images(
    images: &[&Image],
    cfg: &VqTrainConfig,
    probe: Option<&ProbeModel<f32>>,
) -> Result<(VqModel<f32>, VqTrainLog), VqError> {
    if cfg.cip && probe.is_none() {
        return Err(VqError::Config("cip loss enabled but no probe model given".into()));
    }
    if images.is_empty() {
        return Err(VqError::Config("no training images".into()));
    }
    let probe = if cfg.cip { probe } else { None };
    let mut model = VqModel::<f32>::new(cfg.model.clone(), cfg.seed);
    let mut opt = AdamWState::new(&model.params, AdamWConfig { lr: cfg.lr, ..Default::default() });
    let k = cfg.model.k_img;
    let nz = cfg.model.n_z;
    let mut log = VqTrainLog::default();
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut window = vec![0usize; k];
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.seed, "vq-epoch", epoch as u64));
        let mut ep = VqEpochLog { epoch, ..Default::default() };
        let mut all_idx = Vec::new();
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Image> = chunk.iter().map(|&i| images[i]).collect();
            let x: Tensor<f32> = image_batch(&batch);
            let mut g = Graph::with_params(&model.params);
            let lv = model.loss(&mut g, &x, probe);
            let total = g.value(lv.total).item() as f64;
            if !total.is_finite() {
                return Err(VqError::NonFinite { what: "tokenizer", step: step as u64 });
            }
            if step == 0 {
                log.first_step_total = total;
            }
            ep.total += total;
            ep.l1 += g.value(lv.l1).item() as f64;
            ep.codebook += g.value(lv.codebook).item() as f64;
            ep.commit += g.value(lv.commit).item() as f64;
            if let Some(c) = lv.cip {
                ep.cip += g.value(c).item() as f64;
            }
            let grads = g.backward(lv.total);
            drop(g);
            model.params.zero_grad();
            model.params.accumulate(&grads);
            opt.step(&mut model.params).map_err(|e| VqError::Config(e.to_string()))?;
            for &i in &lv.indices {
                window[i] += 1;
            }
            all_idx.extend_from_slice(&lv.indices);
            step += 1;
            batches += 1.0;
            if cfg.reinit_dead && step % cfg.reinit_every == 0 {
                let mut rng = stream_rng(cfg.seed, "vq-reinit", step as u64);
                let rows = lv.latents.len() / nz;
                let cb = model.params.value_mut(model.codebook).data_mut();
                for (e, count) in window.iter_mut().enumerate() {
                    if *count == 0 {
                        let r = rng.random_range(0..rows);
                        for j in 0..nz {
                            cb[e * nz + j] = lv.latents[r * nz + j] as f32;
                        }
                        ep.reinitialized += 1;
                    }
                    *count = 0;
                }
            }
        }
        for v in [&mut ep.total, &mut ep.l1, &mut ep.codebook, &mut ep.commit, &mut ep.cip] {
            *v /= batches;
        }
        let (counts, h) = usage(&all_idx, k);
        ep.used_entries = counts.iter().filter(|&&c| c > 0).count();
        ep.usage_entropy = h;
        ep.usage = counts;
        if h < cfg.entropy_floor {
            log::warn!("codebook usage entropy {h:.3} below floor {:.3} at epoch {epoch}", cfg.entropy_floor);
        }
        log::info!(
            "vq epoch {epoch}: total {:.4} l1 {:.4} cb {:.4} cip {:.4} used {}/{} H {:.2} reinit {}",
            ep.total,
            ep.l1,
            ep.codebook,
            ep.cip,
            ep.used_entries,
            k,
            h,
            ep.reinitialized
        );
        log.epochs.push(ep);
    }
    Ok((model, log))
}
