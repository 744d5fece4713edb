//! AUROC and F1 with micro, macro and support-weighted aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Rank-based (Mann-Whitney) AUROC, ties counted as one half.
/// `None` when either class is empty.
pub fn auroc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), truth.len(), "auroc: length mismatch");
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if truth[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs(pred: &[bool], truth: &[bool]) -> Self {
        assert_eq!(pred.len(), truth.len(), "confusion: length mismatch");
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// 2TP / (2TP + FP + FN); 0 when the denominator vanishes.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / d as f64
        }
    }

    fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

pub fn f1(pred: &[bool], truth: &[bool]) -> f64 {
    Confusion::from_pairs(pred, truth).f1()
}

/// Aggregated scores over named classes. Undefined per-class values are left
/// out of `per_class` and counted in `skipped`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub micro: f64,
    #[serde(rename = "macro")]
    pub macro_: f64,
    pub weighted: f64,
    pub per_class: BTreeMap<String, f64>,
    pub skipped: Vec<String>,
}

/// One column per class: scores and truth of equal length.
pub struct ClassColumn<'a> {
    pub name: &'a str,
    pub scores: Vec<f64>,
    pub truth: Vec<bool>,
}

pub fn auroc_aggregate(columns: &[ClassColumn]) -> Aggregate {
    let mut agg = Aggregate::default();
    let (mut pooled_s, mut pooled_t) = (Vec::new(), Vec::new());
    let (mut sum, mut wsum, mut wtot, mut n) = (0.0, 0.0, 0.0, 0usize);
    for c in columns {
        pooled_s.extend_from_slice(&c.scores);
        pooled_t.extend_from_slice(&c.truth);
        match auroc(&c.scores, &c.truth) {
            Some(v) => {
                let support = c.truth.iter().filter(|&&t| t).count() as f64;
                agg.per_class.insert(c.name.to_string(), v);
                sum += v;
                n += 1;
                wsum += support * v;
                wtot += support;
            }
            None => agg.skipped.push(c.name.to_string()),
        }
    }
    agg.micro = auroc(&pooled_s, &pooled_t).unwrap_or(0.5);
    agg.macro_ = if n > 0 { sum / n as f64 } else { 0.5 };
    agg.weighted = if wtot > 0.0 { wsum / wtot } else { agg.macro_ };
    agg
}

/// F1 aggregation; `scores` are thresholded at `threshold`.
pub fn f1_aggregate(columns: &[ClassColumn], threshold: f64) -> Aggregate {
    let mut agg = Aggregate::default();
    let mut pooled = Confusion::default();
    let (mut sum, mut wsum, mut wtot) = (0.0, 0.0, 0.0);
    for c in columns {
        let pred: Vec<bool> = c.scores.iter().map(|&s| s >= threshold).collect();
        let conf = Confusion::from_pairs(&pred, &c.truth);
        pooled.add(&conf);
        let v = conf.f1();
        let support = (conf.tp + conf.fn_) as f64;
        agg.per_class.insert(c.name.to_string(), v);
        sum += v;
        wsum += support * v;
        wtot += support;
    }
    agg.micro = pooled.f1();
    agg.macro_ = if columns.is_empty() { 0.0 } else { sum / columns.len() as f64 };
    agg.weighted = if wtot > 0.0 { wsum / wtot } else { 0.0 };
    agg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::rng_from;
    use rand::Rng as _;

    fn pair_oracle(s: &[f64], t: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if t[i] && !t[j] {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_definitions() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(auroc(&[0.3; 6], &[true, false, true, false, false, true]), Some(0.5));
        assert_eq!(auroc(&[0.3, 0.4], &[true, true]), None);
    }

    #[test]
    fn auroc_matches_pair_oracle() {
        let mut rng = rng_from(17);
        for _ in 0..50 {
            let n = 20;
            let s: Vec<f64> = (0..n).map(|_| (rng.random_range(0..6) as f64) * 0.5).collect();
            let mut t: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            t[0] = true;
            t[1] = false;
            assert_eq!(auroc(&s, &t).unwrap(), pair_oracle(&s, &t));
        }
    }

    #[test]
    fn f1_conventions() {
        assert_eq!(f1(&[true, false, true], &[true, false, true]), 1.0);
        assert_eq!(f1(&[false, false], &[true, false]), 0.0);
        assert_eq!(f1(&[false, false], &[false, false]), 0.0);
    }

    #[test]
    fn f1_hand_count() {
        // tp=4 fp=2 fn=3 tn=5
        let pred = [true, true, true, true, true, true, false, false, false, false, false, false, false, false];
        let truth = [true, true, true, true, false, false, true, true, true, false, false, false, false, false];
        let c = Confusion::from_pairs(&pred, &truth);
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (4, 2, 3, 5));
        let p = 4.0 / 6.0;
        let r = 4.0 / 7.0;
        assert!((c.f1() - 2.0 * p * r / (p + r)).abs() < 1e-15);
    }

    #[test]
    fn aggregates_skip_degenerate() {
        let cols = [
            ClassColumn { name: "a", scores: vec![0.9, 0.1, 0.8, 0.2], truth: vec![true, false, true, false] },
            ClassColumn { name: "b", scores: vec![0.1, 0.1, 0.1, 0.1], truth: vec![false; 4] },
        ];
        let agg = auroc_aggregate(&cols);
        assert_eq!(agg.skipped, vec!["b".to_string()]);
        assert_eq!(agg.macro_, 1.0);
        assert_eq!(agg.weighted, 1.0);
        let f = f1_aggregate(&cols, 0.5);
        assert_eq!(f.per_class["a"], 1.0);
        assert_eq!(f.micro, 1.0);
        assert_eq!(f.macro_, 0.5);
    }
}
