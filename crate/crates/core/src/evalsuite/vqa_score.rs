//! 0 / 0.5 / 1 rubric for VQA answers against structured facts.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::synthcorpus::{AnswerFacts, QaPair, QuestionFamily, Severity, Side};

/// Facts read off an answer string.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub present: bool,
    pub sides: Vec<Side>,
    pub severities: Vec<Severity>,
}

pub fn parse_answer(text: &str) -> ParsedAnswer {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    ParsedAnswer {
        present: !words.iter().any(|w| matches!(*w, "no" | "not" | "absent" | "none")),
        sides: words.iter().filter_map(|w| Side::from_word(w)).collect(),
        severities: words.iter().filter_map(|w| Severity::from_word(w)).collect(),
    }
}

/// Presence mismatch or any contradicting side/severity scores 0; a missing
/// required secondary fact scores 0.5.
pub fn vqa_score(predicted: &str, facts: &AnswerFacts) -> f64 {
    let p = parse_answer(predicted);
    if p.present != facts.present {
        return 0.0;
    }
    if !facts.present {
        return 1.0;
    }
    if p.sides.iter().any(|s| Some(*s) != facts.side) || p.severities.iter().any(|s| Some(*s) != facts.severity) {
        return 0.0;
    }
    let missing = match facts.family {
        QuestionFamily::Presence => false,
        QuestionFamily::Location => facts.side.is_some() && p.sides.is_empty(),
        QuestionFamily::Severity => facts.severity.is_some() && p.severities.is_empty(),
    };
    if missing {
        0.5
    } else {
        1.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VqaAccuracy {
    pub all: f64,
    pub presence: f64,
    pub location: f64,
    pub severity: f64,
    pub n: usize,
}

/// Mean rubric score overall and per family. Families with no questions score 0.
pub fn vqa_accuracy(items: &[(String, AnswerFacts)]) -> VqaAccuracy {
    let mut sums: BTreeMap<QuestionFamily, (f64, usize)> = BTreeMap::new();
    let mut total = 0.0;
    for (ans, facts) in items {
        let s = vqa_score(ans, facts);
        total += s;
        let e = sums.entry(facts.family).or_default();
        e.0 += s;
        e.1 += 1;
    }
    let mean = |f| sums.get(&f).map(|&(s, n)| s / n as f64).unwrap_or(0.0);
    VqaAccuracy {
        all: if items.is_empty() { 0.0 } else { total / items.len() as f64 },
        presence: mean(QuestionFamily::Presence),
        location: mean(QuestionFamily::Location),
        severity: mean(QuestionFamily::Severity),
        n: items.len(),
    }
}

/// Most frequent training answer per question text (ties to the lexicographically smallest).
pub fn majority_answers<'a>(train: impl IntoIterator<Item = &'a QaPair>) -> HashMap<String, String> {
    let mut counts: HashMap<&str, BTreeMap<&str, usize>> = HashMap::new();
    for qa in train {
        *counts.entry(&qa.question).or_default().entry(&qa.answer).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(q, m)| {
            let best = m.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(a, _)| a.to_string()).unwrap_or_default();
            (q.to_string(), best)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcorpus::{vqa::answer, Kind};

    fn facts(family: QuestionFamily, present: bool) -> AnswerFacts {
        AnswerFacts {
            family,
            kind: Kind::Opacity,
            present,
            side: present.then_some(Side::Left),
            severity: present.then_some(Severity::Severe),
        }
    }

    #[test]
    fn canonical_answers_score_one() {
        for fam in QuestionFamily::ALL {
            for present in [true, false] {
                let f = facts(fam, present);
                assert_eq!(vqa_score(&answer(&f), &f), 1.0, "{fam:?} {present}");
            }
        }
    }

    #[test]
    fn wrong_side_is_zero() {
        let f = facts(QuestionFamily::Location, true);
        assert_eq!(vqa_score("The opacity is on the right side.", &f), 0.0);
    }

    #[test]
    fn omitted_side_is_half() {
        let f = facts(QuestionFamily::Location, true);
        assert_eq!(vqa_score("There is an opacity.", &f), 0.5);
    }

    #[test]
    fn presence_mismatch_is_zero() {
        assert_eq!(vqa_score("No, there is no opacity.", &facts(QuestionFamily::Presence, true)), 0.0);
        assert_eq!(vqa_score("Yes, there is severe left opacity.", &facts(QuestionFamily::Presence, false)), 0.0);
    }

    #[test]
    fn majority_picks_most_common() {
        let mk = |a: &str| QaPair { question: "Q?".into(), answer: a.into(), facts: facts(QuestionFamily::Presence, false) };
        let pairs = [mk("b"), mk("a"), mk("b")];
        assert_eq!(majority_answers(&pairs)["Q?"], "b");
    }
}
