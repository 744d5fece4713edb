//! Report labeler and the metric stack: AUROC/F1, Jaccard, FID, BLEU/ROUGE-L, VQA rubric.

pub mod classification;
pub mod fid;
pub mod jaccard;
pub mod labeler;
pub mod nlg;
pub mod vqa_score;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classification::{auroc, auroc_aggregate, f1, f1_aggregate, Aggregate, ClassColumn, Confusion};
pub use fid::{fid, FidError, FidResult};
pub use jaccard::{jaccard, JaccardReport};
pub use labeler::{extract_labels, finding_labels, gold_labels, KindLabel, LabelState, LabelVector, UncertainPolicy};
pub use nlg::{bleu, rouge_l, BleuScores, BleuStats};
pub use vqa_score::{majority_answers, vqa_accuracy, vqa_score, VqaAccuracy};

use crate::synthcorpus::Kind;

/// Label-based metrics for generated reports against reference reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub auroc: Aggregate,
    pub f1: Aggregate,
    pub auroc_uncertain_positive: Aggregate,
    pub f1_uncertain_positive: Aggregate,
    pub jaccard: JaccardReport,
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub empty_candidates: usize,
    pub n: usize,
}

/// Probe-based metrics for generated images against source findings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub auroc: Aggregate,
    pub f1: Aggregate,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub report: ReportMetrics,
    pub image: ImageMetrics,
    pub fid: f64,
    pub fid_ridge_added: bool,
    pub vqa_accuracy: VqaAccuracy,
}

fn label_columns(pred: &[LabelVector], truth: &[LabelVector], policy: UncertainPolicy) -> Vec<ClassColumn<'static>> {
    Kind::ALL
        .iter()
        .map(|&k| ClassColumn {
            name: k.name(),
            scores: pred.iter().map(|l| l.binary(k, policy) as u8 as f64).collect(),
            truth: truth.iter().map(|l| l.binary(k, policy)).collect(),
        })
        .collect()
}

/// Scores generated report texts against references. `tokenize` splits text into word tokens.
pub fn report_metrics<F>(generated: &[String], references: &[String], tokenize: F) -> ReportMetrics
where
    F: Fn(&str) -> Vec<String>,
{
    assert_eq!(generated.len(), references.len(), "report_metrics: length mismatch");
    let pred: Vec<LabelVector> = generated.iter().map(|t| extract_labels(t)).collect();
    let truth: Vec<LabelVector> = references.iter().map(|t| extract_labels(t)).collect();
    let mut m = ReportMetrics { n: generated.len(), ..Default::default() };
    for (policy, auc, f) in [
        (UncertainPolicy::AsNegative, &mut m.auroc, &mut m.f1),
        (UncertainPolicy::AsPositive, &mut m.auroc_uncertain_positive, &mut m.f1_uncertain_positive),
    ] {
        let cols = label_columns(&pred, &truth, policy);
        *auc = auroc_aggregate(&cols);
        *f = f1_aggregate(&cols, 0.5);
    }
    m.jaccard = jaccard(&pred, &truth);
    let mut stats = BleuStats::default();
    let mut rouge = 0.0;
    for (g, r) in generated.iter().zip(references) {
        let (gt, rt) = (tokenize(g), tokenize(r));
        if gt.is_empty() {
            m.empty_candidates += 1;
        }
        stats.add(&nlg::bleu_stats(&gt, &[&rt]));
        rouge += rouge_l(&gt, &rt);
    }
    m.bleu = stats.scores().bleu;
    m.rouge_l = if generated.is_empty() { 0.0 } else { rouge / generated.len() as f64 };
    m
}

/// Probe logits (one row of 6 per image) against finding labels.
pub fn image_metrics(logits: &[Vec<f64>], truth: &[LabelVector]) -> ImageMetrics {
    assert_eq!(logits.len(), truth.len(), "image_metrics: length mismatch");
    let cols: Vec<ClassColumn> = Kind::ALL
        .iter()
        .map(|&k| ClassColumn {
            name: k.name(),
            scores: logits.iter().map(|l| l[k.index()]).collect(),
            truth: truth.iter().map(|l| l.binary(k, UncertainPolicy::AsNegative)).collect(),
        })
        .collect();
    ImageMetrics { auroc: auroc_aggregate(&cols), f1: f1_aggregate(&cols, 0.0), n: logits.len() }
}

impl MetricsReport {
    /// Flat (metric, value) rows.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = Vec::new();
        let mut agg = |prefix: &str, a: &Aggregate| {
            rows.push((format!("{prefix}.micro"), a.micro));
            rows.push((format!("{prefix}.macro"), a.macro_));
            rows.push((format!("{prefix}.weighted"), a.weighted));
            for (k, v) in &a.per_class {
                rows.push((format!("{prefix}.{k}"), *v));
            }
        };
        agg("report.auroc", &self.report.auroc);
        agg("report.f1", &self.report.f1);
        agg("report.auroc_uncertain_positive", &self.report.auroc_uncertain_positive);
        agg("report.f1_uncertain_positive", &self.report.f1_uncertain_positive);
        agg("image.auroc", &self.image.auroc);
        agg("image.f1", &self.image.f1);
        let j = &self.report.jaccard;
        rows.push(("report.jaccard.micro".into(), j.micro));
        rows.push(("report.jaccard.macro".into(), j.macro_));
        rows.push(("report.jaccard.weighted".into(), j.weighted));
        for (k, v) in &j.per_state {
            rows.push((format!("report.jaccard.{k}"), *v));
        }
        for (i, b) in self.report.bleu.iter().enumerate() {
            rows.push((format!("report.bleu{}", i + 1), *b));
        }
        rows.push(("report.rouge_l".into(), self.report.rouge_l));
        rows.push(("fid".into(), self.fid));
        let v = &self.vqa_accuracy;
        rows.push(("vqa.all".into(), v.all));
        rows.push(("vqa.presence".into(), v.presence));
        rows.push(("vqa.location".into(), v.location));
        rows.push(("vqa.severity".into(), v.severity));
        rows
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "value"])?;
        for (k, v) in self.rows() {
            w.write_record([k, format!("{v}")])?;
        }
        w.flush()
    }
}

/// One JSON line per example: id, predicted labels, reference labels.
pub fn write_label_dump(path: &Path, ids: &[String], pred: &[LabelVector], truth: &[LabelVector]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ((id, p), t) in ids.iter().zip(pred).zip(truth) {
        let line = serde_json::json!({ "study_id": id, "predicted": p, "reference": t });
        writeln!(w, "{line}")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests;
