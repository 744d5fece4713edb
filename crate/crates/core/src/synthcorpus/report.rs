//! Template report grammar.
//!
//! Every positive sentence carries the kind keyword plus the side and severity
//! words, and never a negation cue, so the rule labeler can read it back.

use serde::{Deserialize, Serialize};

use super::finding::{has_kind, Finding, Kind, Side};
use crate::numcore::rng::stream_rng;
use rand::Rng as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStyle {
    /// "Findings: ... Impression: ..."
    Verbose,
    /// Impression sentences only.
    Concise,
}

pub const VARIANTS: usize = 3;

const NO_FINDING: [&str; VARIANTS] = [
    "No acute cardiopulmonary abnormality.",
    "No acute cardiopulmonary process.",
    "The lungs are clear without acute abnormality.",
];

fn templates(kind: Kind) -> [&'static str; VARIANTS] {
    match kind {
        Kind::Opacity => [
            "{Sev} {side} lung opacity.",
            "There is a {sev} opacity in the {side} {lung}.",
            "A {sev} {side} opacity is present.",
        ],
        Kind::Effusion => [
            "{Sev} {side} pleural effusion.",
            "There is a {sev} {side} pleural effusion.",
            "{Side} pleural effusion is {sev}.",
        ],
        Kind::Cardiomegaly => ["{Sev} cardiomegaly.", "There is {sev} cardiomegaly.", "The heart shows {sev} cardiomegaly."],
        Kind::Edema => [
            "{Sev} bilateral pulmonary edema.",
            "There is {sev} bilateral edema.",
            "Appearance is consistent with {sev} bilateral edema.",
        ],
        Kind::Pneumothorax => [
            "{Sev} {side} pneumothorax.",
            "There is a {sev} {side} pneumothorax.",
            "A {sev} pneumothorax is seen on the {side} side.",
        ],
        Kind::NoFinding => NO_FINDING,
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// One impression sentence for a finding.
pub fn finding_sentence(f: &Finding, variant: usize) -> String {
    let t = templates(f.kind)[variant % VARIANTS];
    let lung = if f.side == Side::Bilateral { "lungs" } else { "lung" };
    t.replace("{Sev}", &capitalize(f.severity.word()))
        .replace("{sev}", f.severity.word())
        .replace("{Side}", &capitalize(f.side.word()))
        .replace("{side}", f.side.word())
        .replace("{lung}", lung)
}

/// Kinds a verbose report explicitly negates.
pub fn negated_kinds(findings: &[Finding]) -> Vec<Kind> {
    let mut out = Vec::new();
    for kind in [Kind::Effusion, Kind::Pneumothorax] {
        if has_kind(findings, kind).is_none() {
            out.push(kind);
        }
    }
    let normal = findings.iter().all(|f| f.kind == Kind::NoFinding);
    if !normal && has_kind(findings, Kind::Edema).is_none() {
        out.push(Kind::Edema);
    }
    out
}

fn pertinent_negatives(findings: &[Finding]) -> Vec<&'static str> {
    let neg = negated_kinds(findings);
    let mut out = Vec::new();
    match (neg.contains(&Kind::Effusion), neg.contains(&Kind::Pneumothorax)) {
        (true, true) => out.push("No pleural effusion or pneumothorax."),
        (true, false) => out.push("No pleural effusion."),
        (false, true) => out.push("No pneumothorax."),
        (false, false) => {}
    }
    if neg.contains(&Kind::Edema) {
        out.push("No pulmonary edema.");
    }
    out
}

fn variant_for(seed: u64, stream: &str, kind: Kind) -> usize {
    stream_rng(seed, stream, kind.index() as u64).random_range(0..VARIANTS)
}

/// Deterministic report text for `(findings, style, seed)`.
pub fn render_report(findings: &[Finding], style: ReportStyle, seed: u64) -> String {
    let impression: Vec<String> =
        findings.iter().map(|f| finding_sentence(f, variant_for(seed, "impression", f.kind))).collect();
    let impression = impression.join(" ");
    match style {
        ReportStyle::Concise => impression,
        ReportStyle::Verbose => {
            let mut parts = vec!["Findings:".to_string()];
            if findings.iter().all(|f| f.kind == Kind::NoFinding) {
                parts.push("The lungs are clear.".into());
            } else {
                for f in findings {
                    parts.push(finding_sentence(f, variant_for(seed, "findings", f.kind)));
                }
            }
            parts.extend(pertinent_negatives(findings).into_iter().map(String::from));
            parts.push("Impression:".into());
            parts.push(impression);
            parts.join(" ")
        }
    }
}

/// Every sentence the grammar can emit, for vocabulary construction.
pub fn all_report_sentences() -> Vec<String> {
    let mut out: Vec<String> = NO_FINDING.iter().map(|s| s.to_string()).collect();
    for kind in Kind::PATHOLOGIES {
        for &side in kind.allowed_sides() {
            for sev in super::finding::Severity::GRADED {
                let f = Finding { kind, side, severity: sev };
                out.extend((0..VARIANTS).map(|v| finding_sentence(&f, v)));
            }
        }
    }
    out.extend(
        ["Findings:", "Impression:", "The lungs are clear.", "No pleural effusion or pneumothorax.", "No pleural effusion.", "No pneumothorax.", "No pulmonary edema."]
            .iter()
            .map(|s| s.to_string()),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcorpus::finding::Severity;

    #[test]
    fn no_finding_variant_zero() {
        assert_eq!(finding_sentence(&Finding::no_finding(), 0), "No acute cardiopulmonary abnormality.");
    }

    #[test]
    fn keywords_always_present() {
        let f = Finding::new(Kind::Effusion, Side::Right, Severity::Moderate).unwrap();
        for seed in 0..30 {
            for style in [ReportStyle::Verbose, ReportStyle::Concise] {
                let r = render_report(&[f], style, seed).to_lowercase();
                for w in ["effusion", "right", "moderate"] {
                    assert!(r.contains(w), "{r}");
                }
            }
        }
    }

    #[test]
    fn verbose_contains_concise_impression() {
        let f = [
            Finding::new(Kind::Opacity, Side::Bilateral, Severity::Mild).unwrap(),
            Finding::new(Kind::Cardiomegaly, Side::None, Severity::Severe).unwrap(),
        ];
        let c = render_report(&f, ReportStyle::Concise, 4);
        let v = render_report(&f, ReportStyle::Verbose, 4);
        assert!(v.ends_with(&format!("Impression: {c}")));
        assert_eq!(c, render_report(&f, ReportStyle::Concise, 4));
    }
}
