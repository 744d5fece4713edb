//! Keyword and negation rules that map report text to per-kind label states.

use serde::{Deserialize, Serialize};

use crate::synthcorpus::finding::{Finding, Kind, Severity, Side};
use crate::synthcorpus::report::{negated_kinds, ReportStyle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelState {
    Positive,
    Negative,
    Uncertain,
    NoMention,
}

impl LabelState {
    pub const ALL: [LabelState; 4] = [LabelState::Positive, LabelState::Negative, LabelState::Uncertain, LabelState::NoMention];

    pub fn name(self) -> &'static str {
        match self {
            LabelState::Positive => "positive",
            LabelState::Negative => "negative",
            LabelState::Uncertain => "uncertain",
            LabelState::NoMention => "no_mention",
        }
    }

    fn rank(self) -> u8 {
        match self {
            LabelState::Positive => 3,
            LabelState::Uncertain => 2,
            LabelState::Negative => 1,
            LabelState::NoMention => 0,
        }
    }
}

/// How the uncertain state is binarized for AUROC/F1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertainPolicy {
    #[default]
    AsNegative,
    AsPositive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindLabel {
    pub state: LabelState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<Side>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<Severity>,
}

impl KindLabel {
    const EMPTY: KindLabel = KindLabel { state: LabelState::NoMention, side: None, severity: None };
}

/// One label per finding kind, indexed by [`Kind::index`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector(pub [KindLabel; 6]);

impl Default for LabelVector {
    fn default() -> Self {
        LabelVector([KindLabel::EMPTY; 6])
    }
}

impl LabelVector {
    pub fn get(&self, kind: Kind) -> &KindLabel {
        &self.0[kind.index()]
    }

    pub fn state(&self, kind: Kind) -> LabelState {
        self.0[kind.index()].state
    }

    pub fn binary(&self, kind: Kind, policy: UncertainPolicy) -> bool {
        match self.state(kind) {
            LabelState::Positive => true,
            LabelState::Uncertain => policy == UncertainPolicy::AsPositive,
            _ => false,
        }
    }

    fn merge(&mut self, kind: Kind, label: KindLabel) {
        let cur = &mut self.0[kind.index()];
        if label.state.rank() > cur.state.rank() {
            *cur = label;
        }
    }
}

fn kind_of_word(w: &str) -> Option<Kind> {
    Some(match w {
        "opacity" | "opacities" | "consolidation" => Kind::Opacity,
        "effusion" | "effusions" => Kind::Effusion,
        "cardiomegaly" => Kind::Cardiomegaly,
        "edema" => Kind::Edema,
        "pneumothorax" | "pneumothoraces" => Kind::Pneumothorax,
        _ => return None,
    })
}

const NEGATION: [&str; 4] = ["no", "without", "not", "free"];
const UNCERTAIN: [&str; 6] = ["possible", "possibly", "may", "probable", "questionable", "suspected"];

fn is_no_finding_sentence(s: &str) -> bool {
    ["no acute", "lungs are clear", "no abnormality", "normal chest"].iter().any(|p| s.contains(p))
}

/// Label states for free report text. Total: unknown words are ignored.
pub fn extract_labels(text: &str) -> LabelVector {
    let mut out = LabelVector::default();
    let lower = text.to_lowercase();
    for sentence in lower.split(['.', ':', ';', '?', '!', '\n']) {
        let words: Vec<&str> = sentence.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
        if words.is_empty() {
            continue;
        }
        if is_no_finding_sentence(&words.join(" ")) {
            out.merge(Kind::NoFinding, KindLabel { state: LabelState::Positive, side: None, severity: None });
        }
        let kinds: Vec<Kind> = words.iter().filter_map(|w| kind_of_word(w)).collect();
        if kinds.is_empty() {
            continue;
        }
        let state = if words.iter().any(|w| UNCERTAIN.contains(w)) {
            LabelState::Uncertain
        } else if words.iter().any(|w| NEGATION.contains(w)) {
            LabelState::Negative
        } else {
            LabelState::Positive
        };
        let side = words.iter().find_map(|w| Side::from_word(w));
        let severity = words.iter().find_map(|w| Severity::from_word(w));
        for kind in kinds {
            let label = match state {
                LabelState::Negative => KindLabel { state, side: None, severity: None },
                _ => KindLabel { state, side, severity },
            };
            out.merge(kind, label);
        }
    }
    let abnormal = Kind::PATHOLOGIES
        .iter()
        .any(|&k| matches!(out.state(k), LabelState::Positive | LabelState::Uncertain));
    if abnormal && out.state(Kind::NoFinding) == LabelState::Positive {
        out.0[Kind::NoFinding.index()] = KindLabel::EMPTY;
    }
    out
}

/// Labels a report of the given style must yield for these findings.
pub fn gold_labels(findings: &[Finding], style: ReportStyle) -> LabelVector {
    let mut out = LabelVector::default();
    for f in findings {
        out.0[f.kind.index()] = KindLabel {
            state: LabelState::Positive,
            side: (f.side != Side::None).then_some(f.side),
            severity: (f.severity != Severity::None).then_some(f.severity),
        };
    }
    if style == ReportStyle::Verbose {
        for k in negated_kinds(findings) {
            out.0[k.index()].state = LabelState::Negative;
        }
    }
    out
}

/// Labels implied by the findings alone (positive or no-mention).
pub fn finding_labels(findings: &[Finding]) -> LabelVector {
    gold_labels(findings, ReportStyle::Concise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcorpus::{render_report, Finding};

    #[test]
    fn moderate_right_effusion() {
        let f = [Finding::new(Kind::Effusion, Side::Right, Severity::Moderate).unwrap()];
        let l = extract_labels(&render_report(&f, ReportStyle::Concise, 0));
        assert_eq!(*l.get(Kind::Effusion), KindLabel { state: LabelState::Positive, side: Some(Side::Right), severity: Some(Severity::Moderate) });
        for k in [Kind::NoFinding, Kind::Opacity, Kind::Cardiomegaly, Kind::Edema, Kind::Pneumothorax] {
            assert_eq!(l.state(k), LabelState::NoMention);
        }
    }

    #[test]
    fn no_acute_is_no_finding() {
        let l = extract_labels("No acute cardiopulmonary abnormality.");
        assert_eq!(l.state(Kind::NoFinding), LabelState::Positive);
        assert!(Kind::PATHOLOGIES.iter().all(|&k| l.state(k) == LabelState::NoMention));
    }

    #[test]
    fn negation_and_uncertainty() {
        let l = extract_labels("No pleural effusion. Possible left opacity.");
        assert_eq!(l.state(Kind::Effusion), LabelState::Negative);
        assert_eq!(l.state(Kind::Opacity), LabelState::Uncertain);
        assert!(!l.binary(Kind::Opacity, UncertainPolicy::AsNegative));
        assert!(l.binary(Kind::Opacity, UncertainPolicy::AsPositive));
    }

    #[test]
    fn positive_mention_wins_and_clears_normal() {
        let l = extract_labels("No acute process. Severe cardiomegaly. No cardiomegaly.");
        assert_eq!(l.state(Kind::Cardiomegaly), LabelState::Positive);
        assert_eq!(l.state(Kind::NoFinding), LabelState::NoMention);
    }

    #[test]
    fn arbitrary_text_is_no_mention() {
        assert_eq!(extract_labels("banana 42 <VQ001>"), LabelVector::default());
        assert_eq!(extract_labels(""), LabelVector::default());
    }
}
