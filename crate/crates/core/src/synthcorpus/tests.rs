use super::*;

#[test]
fn split_is_exact_and_disjoint() {
    let c = Corpus::generate(100, 0.2, 5).unwrap();
    assert_eq!(c.train().count(), 80);
    assert_eq!(c.test().count(), 20);
    let mut ids: Vec<&str> = c.records.iter().map(|r| r.study_id.as_str()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 100);
}

#[test]
fn generation_is_deterministic() {
    assert_eq!(Corpus::generate(60, 0.2, 9).unwrap(), Corpus::generate(60, 0.2, 9).unwrap());
    assert_ne!(Corpus::generate(60, 0.2, 9).unwrap().records, Corpus::generate(60, 0.2, 10).unwrap().records);
}

#[test]
fn too_small_rejected() {
    assert!(matches!(Corpus::generate(9, 0.2, 1), Err(CorpusError::TooSmall(9))));
}

#[test]
fn no_finding_rate_matches_prior() {
    let mut rng = crate::numcore::rng::stream_rng(11, "prior-check", 0);
    let n = 5000;
    let hits = (0..n).filter(|_| corpus::sample_findings(&mut rng)[0].kind == Kind::NoFinding).count();
    let rate = hits as f64 / n as f64;
    assert!((rate - 0.35).abs() <= 0.02, "{rate}");
}

#[test]
fn sampled_findings_are_valid() {
    let mut rng = crate::numcore::rng::stream_rng(2, "prior-check", 0);
    for _ in 0..2000 {
        validate_findings(&corpus::sample_findings(&mut rng)).unwrap();
    }
}

#[test]
fn every_family_appears_often() {
    let mut rng = crate::numcore::rng::stream_rng(3, "prior-check", 0);
    let mut studies_with = [0usize; 3];
    for i in 0..1000 {
        let f = corpus::sample_findings(&mut rng);
        let qa = gen_vqa(&f, i);
        for (j, fam) in QuestionFamily::ALL.iter().enumerate() {
            if qa.iter().any(|p| p.facts.family == *fam) {
                studies_with[j] += 1;
            }
        }
    }
    assert!(studies_with.iter().all(|&c| c >= 200), "{studies_with:?}");
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = build_corpus(20, 0.25, 4, Some(dir.path())).unwrap();
    let back = Corpus::load(dir.path()).unwrap();
    assert_eq!(c, back);
    let bytes = std::fs::read(dir.path().join("images/s00001.f32")).unwrap();
    assert_eq!(&bytes[..4], b"PXR1");
    assert_eq!(bytes.len(), 12 + 4 * 32 * 32);
}

#[test]
fn unwritable_dir_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let err = build_corpus(10, 0.2, 1, Some(&blocker.join("sub"))).unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
}

#[test]
fn truncated_image_is_rejected() {
    let img = render_image(&[Finding::no_finding()], 1);
    let bytes = corpus::encode_image(&img);
    assert!(corpus::decode_image(&bytes[..100], std::path::Path::new("x.f32")).is_err());
    assert_eq!(corpus::decode_image(&bytes, std::path::Path::new("x.f32")).unwrap(), img);
}
