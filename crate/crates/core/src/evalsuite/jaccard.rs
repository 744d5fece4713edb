//! Per-state Jaccard index between predicted and reference label states.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::labeler::{LabelState, LabelVector};
use crate::synthcorpus::Kind;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JaccardReport {
    pub micro: f64,
    #[serde(rename = "macro")]
    pub macro_: f64,
    pub weighted: f64,
    pub per_state: BTreeMap<String, f64>,
    /// States whose union was empty on both sides (scored 1.0).
    pub empty_states: Vec<String>,
}

/// J_s = |pred = s and true = s| / |pred = s or true = s| over (example, kind) cells.
pub fn jaccard(pred: &[LabelVector], truth: &[LabelVector]) -> JaccardReport {
    assert_eq!(pred.len(), truth.len(), "jaccard: length mismatch");
    let mut inter = [0usize; 4];
    let mut union = [0usize; 4];
    let mut support = [0usize; 4];
    for (p, t) in pred.iter().zip(truth) {
        for kind in Kind::ALL {
            let (ps, ts) = (p.state(kind), t.state(kind));
            for (i, s) in LabelState::ALL.iter().enumerate() {
                let (a, b) = (ps == *s, ts == *s);
                inter[i] += (a && b) as usize;
                union[i] += (a || b) as usize;
                support[i] += b as usize;
            }
        }
    }
    let mut rep = JaccardReport::default();
    let mut values = [0.0; 4];
    for (i, s) in LabelState::ALL.iter().enumerate() {
        values[i] = if union[i] == 0 {
            rep.empty_states.push(s.name().into());
            1.0
        } else {
            inter[i] as f64 / union[i] as f64
        };
        rep.per_state.insert(s.name().into(), values[i]);
    }
    let (ti, tu): (usize, usize) = (inter.iter().sum(), union.iter().sum());
    rep.micro = if tu == 0 { 1.0 } else { ti as f64 / tu as f64 };
    rep.macro_ = values.iter().sum::<f64>() / 4.0;
    let total_support: usize = support.iter().sum();
    rep.weighted = if total_support == 0 {
        rep.macro_
    } else {
        values.iter().zip(&support).map(|(v, &s)| v * s as f64).sum::<f64>() / total_support as f64
    };
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalsuite::labeler::KindLabel;

    fn lv(states: [LabelState; 6]) -> LabelVector {
        LabelVector(states.map(|state| KindLabel { state, side: None, severity: None }))
    }

    #[test]
    fn identical_is_one() {
        use LabelState::*;
        let a = vec![lv([Positive, Negative, NoMention, Uncertain, NoMention, Positive]); 3];
        let r = jaccard(&a, &a);
        assert_eq!(r.micro, 1.0);
        assert!(r.per_state.values().all(|&v| v == 1.0));
    }

    #[test]
    fn disjoint_is_zero() {
        use LabelState::*;
        let a = vec![lv([Positive; 6]), lv([Negative; 6])];
        let b = vec![lv([Uncertain; 6]), lv([NoMention; 6])];
        let r = jaccard(&a, &b);
        assert_eq!(r.micro, 0.0);
        assert!(r.per_state.values().all(|&v| v == 0.0));
    }

    #[test]
    fn constructed_case_matches_set_counts() {
        use LabelState::*;
        let states = [Positive, Negative, Uncertain, NoMention];
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for e in 0..10usize {
            pred.push(lv(std::array::from_fn(|k| states[(e + k) % 4])));
            truth.push(lv(std::array::from_fn(|k| states[(e * k + 1) % 4])));
        }
        let mut cells_p = std::collections::HashSet::new();
        let mut cells_t = std::collections::HashSet::new();
        for e in 0..10 {
            for k in Kind::ALL {
                cells_p.insert((e, k.index(), pred[e].state(k)));
                cells_t.insert((e, k.index(), truth[e].state(k)));
            }
        }
        let r = jaccard(&pred, &truth);
        for s in states {
            let p: std::collections::HashSet<_> = cells_p.iter().filter(|c| c.2 == s).collect();
            let t: std::collections::HashSet<_> = cells_t.iter().filter(|c| c.2 == s).collect();
            let expect = p.intersection(&t).count() as f64 / p.union(&t).count() as f64;
            assert_eq!(r.per_state[s.name()], expect);
        }
        let i: usize = cells_p.intersection(&cells_t).count();
        let u: usize = cells_p.union(&cells_t).count();
        assert_eq!(r.micro, i as f64 / u as f64);
    }
}
