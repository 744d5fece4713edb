use super::*;
use crate::synthcorpus::corpus::sample_findings;
use crate::synthcorpus::{render_report, ReportStyle};

#[test]
fn labeler_inverts_grammar_on_sampled_reports() {
    let mut rng = crate::numcore::rng::stream_rng(99, "labeler-check", 0);
    for i in 0..2000u64 {
        let f = sample_findings(&mut rng);
        for style in [ReportStyle::Verbose, ReportStyle::Concise] {
            let text = render_report(&f, style, i);
            assert_eq!(extract_labels(&text), gold_labels(&f, style), "{text}");
        }
    }
}

#[test]
fn perfect_reports_score_one() {
    let refs: Vec<String> = (0..40u64)
        .map(|i| {
            let mut rng = crate::numcore::rng::rng_from(i);
            render_report(&sample_findings(&mut rng), ReportStyle::Concise, i)
        })
        .collect();
    let tok = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let m = report_metrics(&refs, &refs, tok);
    assert_eq!(m.f1.micro, 1.0);
    assert_eq!(m.jaccard.micro, 1.0);
    assert_eq!(m.bleu[0], 1.0);
    assert_eq!(m.rouge_l, 1.0);
    let mut report = MetricsReport { report: m, ..Default::default() };
    report.fid = 0.0;
    let dir = tempfile::tempdir().unwrap();
    report.write_json(&dir.path().join("m.json")).unwrap();
    report.write_csv(&dir.path().join("m.csv")).unwrap();
    let back: MetricsReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(back, report);
}
