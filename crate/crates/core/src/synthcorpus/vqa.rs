//! Rule-based question/answer generation over the finding list.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::finding::{has_kind, Finding, Kind, Severity, Side};
use crate::numcore::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionFamily {
    Presence,
    Location,
    Severity,
}

impl QuestionFamily {
    pub const ALL: [QuestionFamily; 3] = [QuestionFamily::Presence, QuestionFamily::Location, QuestionFamily::Severity];

    pub fn name(self) -> &'static str {
        match self {
            QuestionFamily::Presence => "presence",
            QuestionFamily::Location => "location",
            QuestionFamily::Severity => "severity",
        }
    }
}

/// Structured ground truth behind one answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerFacts {
    pub family: QuestionFamily,
    pub kind: Kind,
    pub present: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<Side>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<Severity>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub facts: AnswerFacts,
}

pub fn noun(kind: Kind) -> &'static str {
    match kind {
        Kind::Opacity => "opacity",
        Kind::Effusion => "pleural effusion",
        Kind::Cardiomegaly => "cardiomegaly",
        Kind::Edema => "edema",
        Kind::Pneumothorax => "pneumothorax",
        Kind::NoFinding => "abnormality",
    }
}

fn noun_phrase(kind: Kind) -> &'static str {
    match kind {
        Kind::Opacity => "an opacity",
        Kind::Effusion => "a pleural effusion",
        Kind::Cardiomegaly => "cardiomegaly",
        Kind::Edema => "pulmonary edema",
        Kind::Pneumothorax => "a pneumothorax",
        Kind::NoFinding => "an abnormality",
    }
}

pub fn question(family: QuestionFamily, kind: Kind) -> String {
    match family {
        QuestionFamily::Presence => format!("Is there {}?", noun_phrase(kind)),
        QuestionFamily::Location => format!("Where is the {}?", noun(kind)),
        QuestionFamily::Severity => format!("How severe is the {}?", noun(kind)),
    }
}

/// Canonical answer text for a set of facts.
pub fn answer(facts: &AnswerFacts) -> String {
    let n = noun(facts.kind);
    if !facts.present {
        return match facts.family {
            QuestionFamily::Presence => format!("No, there is no {n}."),
            _ => format!("There is no {n}."),
        };
    }
    let side = facts.side.filter(|s| *s != Side::None);
    match facts.family {
        QuestionFamily::Presence => {
            let sev = facts.severity.map(|s| s.word()).unwrap_or("");
            let mut words = vec!["Yes, there is", sev];
            if let Some(s) = side {
                words.push(s.word());
            }
            words.push(n);
            format!("{}.", words.into_iter().filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" "))
        }
        QuestionFamily::Location => match side {
            Some(Side::Bilateral) => format!("The {n} is bilateral."),
            Some(s) => format!("The {n} is on the {} side.", s.word()),
            None => format!("The {n} is central."),
        },
        QuestionFamily::Severity => format!("The {n} is {}.", facts.severity.map(|s| s.word()).unwrap_or("present")),
    }
}

pub fn facts_for(findings: &[Finding], family: QuestionFamily, kind: Kind) -> AnswerFacts {
    match has_kind(findings, kind) {
        Some(f) => AnswerFacts {
            family,
            kind,
            present: true,
            side: (f.side != Side::None).then_some(f.side),
            severity: (f.severity != Severity::None).then_some(f.severity),
        },
        None => AnswerFacts { family, kind, present: false, side: None, severity: None },
    }
}

/// The first question of each family targets a present finding when one fits.
fn pick_kind(rng: &mut crate::numcore::rng::Rng, findings: &[Finding], family: QuestionFamily, first: bool) -> Kind {
    let eligible: Vec<Kind> = Kind::PATHOLOGIES
        .into_iter()
        .filter(|k| family != QuestionFamily::Location || k.is_lateralized())
        .collect();
    let present: Vec<Kind> = eligible.iter().copied().filter(|&k| has_kind(findings, k).is_some()).collect();
    let absent: Vec<Kind> = eligible.iter().copied().filter(|&k| has_kind(findings, k).is_none()).collect();
    let p_present = match (family, first) {
        (QuestionFamily::Presence, _) => 0.5,
        (_, true) => 1.0,
        (_, false) => 0.5,
    };
    if !present.is_empty() && (absent.is_empty() || rng.random_bool(p_present)) {
        *present.choose(rng).expect("non-empty")
    } else {
        *absent.choose(rng).expect("non-empty")
    }
}

/// 3 to 5 QA pairs: one per family, then extra draws without repeating a question.
pub fn gen_vqa(findings: &[Finding], seed: u64) -> Vec<QaPair> {
    let mut rng = stream_rng(seed, "vqa", 0);
    let total = rng.random_range(3..=5);
    let families = QuestionFamily::ALL;
    let mut out: Vec<QaPair> = Vec::with_capacity(total);
    let mut attempts = 0;
    while out.len() < total && attempts < 64 {
        attempts += 1;
        let family = if out.len() < 3 { families[out.len()] } else { *families.choose(&mut rng).expect("non-empty") };
        let kind = pick_kind(&mut rng, findings, family, out.len() < 3);
        let q = question(family, kind);
        if out.iter().any(|p| p.question == q) {
            continue;
        }
        let facts = facts_for(findings, family, kind);
        out.push(QaPair { answer: answer(&facts), question: q, facts });
    }
    out
}

/// Every question and answer string the generator can emit.
pub fn all_vqa_strings() -> Vec<String> {
    let mut out = Vec::new();
    for kind in Kind::PATHOLOGIES {
        for family in QuestionFamily::ALL {
            out.push(question(family, kind));
            out.push(answer(&AnswerFacts { family, kind, present: false, side: None, severity: None }));
            for &side in kind.allowed_sides() {
                for sev in Severity::GRADED {
                    let f = Finding { kind, side, severity: sev };
                    out.push(answer(&facts_for(&[f], family, kind)));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_finding_has_negative_presence() {
        for seed in 0..50 {
            let qa = gen_vqa(&[Finding::no_finding()], seed);
            assert!((3..=5).contains(&qa.len()));
            assert!(qa.iter().any(|p| p.facts.family == QuestionFamily::Presence && !p.facts.present));
        }
    }

    #[test]
    fn severe_left_opacity_questions() {
        let f = [Finding::new(Kind::Opacity, Side::Left, Severity::Severe).unwrap()];
        for seed in 0..50 {
            let qa = gen_vqa(&f, seed);
            assert!(qa.iter().any(|p| p.facts.family == QuestionFamily::Severity && p.facts.severity == Some(Severity::Severe)));
            assert!(qa.iter().any(|p| p.facts.family == QuestionFamily::Location && p.facts.side == Some(Side::Left)));
        }
    }

    #[test]
    fn facts_are_entailed() {
        let f = [
            Finding::new(Kind::Effusion, Side::Right, Severity::Mild).unwrap(),
            Finding::new(Kind::Edema, Side::Bilateral, Severity::Moderate).unwrap(),
        ];
        for seed in 0..100 {
            for p in gen_vqa(&f, seed) {
                assert_eq!(p.facts, facts_for(&f, p.facts.family, p.facts.kind));
                assert_eq!(p.answer, answer(&p.facts));
            }
        }
    }
}
