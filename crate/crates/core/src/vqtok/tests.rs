use super::*;
use crate::synthcorpus::{render_image, Finding, Image};

fn tiny_cfg() -> VqConfig {
    VqConfig { image_size: 8, channels: [2, 3], k_img: 6, n_z: 4, beta: 0.25, cip_weight: 100.0 }
}

#[test]
fn encode_shape_and_determinism() {
    let m = VqModel::<f32>::new(VqConfig::default(), 1);
    let img = render_image(&[Finding::no_finding()], 3);
    let a = m.encode(&[&img]).unwrap();
    assert_eq!(a[0].0.len(), 64);
    assert!(a[0].0.iter().all(|&i| i < 128));
    assert_eq!(a, m.encode(&[&img]).unwrap());
}

#[test]
fn decode_is_total_and_in_range() {
    let m = VqModel::<f32>::new(VqConfig::default(), 1);
    let out = m.decode(&[ImageTokens(vec![0; 64])]).unwrap();
    assert!(out[0].data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    assert_eq!(out, m.decode(&[ImageTokens(vec![0; 64])]).unwrap());
}

#[test]
fn decode_rejects_bad_index() {
    let m = VqModel::<f32>::new(VqConfig::default(), 1);
    let mut t = vec![0; 64];
    t[17] = 128;
    match m.decode(&[ImageTokens(t)]) {
        Err(VqError::TokenRange { position: 17, index: 128, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn encode_rejects_wrong_shape() {
    let m = VqModel::<f32>::new(VqConfig::default(), 1);
    let img = Image::filled(16, 16, 0.5);
    assert!(matches!(m.encode(&[&img]), Err(VqError::ImageShape { .. })));
}

#[test]
fn cip_is_zero_on_identity_and_symmetric() {
    let p = ProbeModel::<f32>::new(ProbeConfig::default(), 2);
    let a = render_image(&[Finding::no_finding()], 1);
    let b = render_image(&[Finding::no_finding()], 2);
    assert_eq!(cip_loss(&a, &a, &p), 0.0);
    assert_eq!(cip_loss(&a, &b, &p), cip_loss(&b, &a, &p));
    assert!(cip_loss(&a, &b, &p) > 0.0);
}

#[test]
fn cip_toggle_removes_exactly_weighted_term() {
    let cfg = tiny_cfg();
    let m = VqModel::<f64>::new(cfg.clone(), 3);
    let p = ProbeModel::<f64>::new(ProbeConfig { image_size: 8, channels: [2, 2], d_f: 3 }, 4);
    let imgs: Vec<Image> = (0..3).map(|s| Image::new(8, 8, (0..64).map(|i| ((i * 7 + s * 13) % 17) as f32 / 17.0).collect())).collect();
    let refs: Vec<&Image> = imgs.iter().collect();
    let x = layers::image_batch::<f64>(&refs);
    let mut g1 = crate::numcore::Graph::with_params(&m.params);
    let with = m.loss(&mut g1, &x, Some(&p));
    let mut g2 = crate::numcore::Graph::with_params(&m.params);
    let without = m.loss(&mut g2, &x, None);
    let diff = g1.value(with.total).item() - g2.value(without.total).item();
    let cip = g1.value(with.cip.unwrap()).item();
    assert!((diff - 100.0 * cip).abs() < 1e-12 * (1.0 + diff.abs()));
}

#[test]
fn probe_feature_length() {
    let p = ProbeModel::<f32>::new(ProbeConfig::default(), 2);
    let a = render_image(&[Finding::no_finding()], 1);
    assert_eq!(p.features(&[&a])[0].len(), 64);
    assert_eq!(p.logits(&[&a])[0].len(), 6);
}

#[test]
fn probe_rejects_missing_class() {
    let corpus = crate::synthcorpus::Corpus::generate(12, 0.2, 1).unwrap();
    let cfg = ProbeTrainConfig { min_train_records: 1, epochs: 1, ..Default::default() };
    let present: Vec<_> = corpus.train().flat_map(|r| r.findings.iter().map(|f| f.kind)).collect();
    match train_probe(&corpus, &cfg) {
        Err(VqError::MissingClass(k)) => assert!(!present.iter().any(|p| p.name() == k)),
        Ok(_) => assert!(crate::synthcorpus::Kind::ALL.iter().all(|k| present.contains(k))),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = VqModel::<f32>::new(VqConfig::default(), 5);
    m.save(&dir.path().join("vq.bin"), 5, Some("abc".into()), true).unwrap();
    let (back, meta) = VqModel::load(&dir.path().join("vq.bin")).unwrap();
    assert_eq!(back, m);
    assert_eq!(meta.probe_hash.as_deref(), Some("abc"));
    let p = ProbeModel::<f32>::new(ProbeConfig::default(), 6);
    let h = p.save(&dir.path().join("probe.bin"), 6).unwrap();
    assert_eq!(ProbeModel::load(&dir.path().join("probe.bin")).unwrap(), p);
    assert_eq!(h.len(), 64);
}
