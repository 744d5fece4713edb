//! BLEU-1..4 and ROUGE-L over token sequences.
//!
//! BLEU uses clipped counts against the per-n-gram maximum over references,
//! the closest reference length for the brevity penalty (ties to the shorter),
//! and no smoothing: a zero n-gram precision makes BLEU-n zero.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

pub const ROUGE_BETA: f64 = 1.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuScores {
    pub bleu: [f64; 4],
    /// Set when the candidate was empty.
    pub empty_candidate: bool,
}

fn ngram_counts<T: Eq + Hash + Clone>(toks: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped matches and candidate totals per order, plus (cand_len, ref_len).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add(&mut self, o: &BleuStats) {
        for i in 0..4 {
            self.matches[i] += o.matches[i];
            self.totals[i] += o.totals[i];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
    }

    pub fn scores(&self) -> BleuScores {
        if self.cand_len == 0 {
            return BleuScores { bleu: [0.0; 4], empty_candidate: true };
        }
        let bp = if self.cand_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        };
        let mut out = [0.0; 4];
        let mut log_sum = 0.0;
        for n in 0..4 {
            if self.matches[n] == 0 || self.totals[n] == 0 {
                break;
            }
            log_sum += (self.matches[n] as f64 / self.totals[n] as f64).ln();
            out[n] = bp * (log_sum / (n + 1) as f64).exp();
        }
        BleuScores { bleu: out, empty_candidate: false }
    }
}

pub fn bleu_stats<T: Eq + Hash + Clone>(candidate: &[T], references: &[&[T]]) -> BleuStats {
    let mut st = BleuStats { cand_len: candidate.len(), ..Default::default() };
    st.ref_len = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| ((l as i64 - candidate.len() as i64).abs(), l))
        .unwrap_or(0);
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        st.totals[n - 1] = candidate.len().saturating_sub(n - 1);
        st.matches[n - 1] = cand.iter().map(|(g, &c)| c.min(*max_ref.get(g).unwrap_or(&0))).sum();
    }
    st
}

/// Sentence-level BLEU-1..4.
pub fn bleu<T: Eq + Hash + Clone>(candidate: &[T], references: &[&[T]]) -> BleuScores {
    bleu_stats(candidate, references).scores()
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure (1+β²)PR / (R + β²P) with β = 1.2.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Best ROUGE-L over several references.
pub fn rouge_l_multi<T: Eq>(candidate: &[T], references: &[&[T]]) -> f64 {
    references.iter().map(|r| rouge_l(candidate, r)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_is_one() {
        let a = toks("there is a mild left pleural effusion .");
        let b = bleu(&a, &[&a]);
        assert_eq!(b.bleu, [1.0; 4]);
        assert_eq!(rouge_l(&a, &a), 1.0);
    }

    #[test]
    fn no_overlap_is_zero() {
        let a = toks("a b c d");
        let b = toks("e f g h");
        assert_eq!(bleu(&a, &[&b]).bleu, [0.0; 4]);
        assert_eq!(rouge_l(&a, &b), 0.0);
    }

    #[test]
    fn empty_candidate_flagged() {
        let e: Vec<&str> = vec![];
        let b = bleu(&e, &[&toks("x y")]);
        assert!(b.empty_candidate);
        assert_eq!(b.bleu, [0.0; 4]);
    }

    #[test]
    fn hand_counted_case() {
        // candidate 7 tokens, reference 8 tokens.
        let c = toks("the heart shows mild cardiomegaly today .");
        let r = toks("the heart shows severe cardiomegaly on film .");
        // unigrams: the heart shows cardiomegaly . = 5/7
        // bigrams: "the heart" "heart shows" = 2/6
        // trigrams: "the heart shows" = 1/5
        // 4-grams: 0/4
        let s = bleu_stats(&c, &[&r]);
        assert_eq!(s.matches, [5, 2, 1, 0]);
        assert_eq!(s.totals, [7, 6, 5, 4]);
        let bp = (1.0f64 - 8.0 / 7.0).exp();
        let b = s.scores().bleu;
        assert!((b[0] - bp * 5.0 / 7.0).abs() < 1e-12);
        assert!((b[1] - bp * (5.0f64 / 7.0 * 2.0 / 6.0).sqrt()).abs() < 1e-12);
        assert!((b[2] - bp * (5.0f64 / 7.0 * 2.0 / 6.0 * 1.0 / 5.0).cbrt()).abs() < 1e-12);
        assert_eq!(b[3], 0.0);
        // LCS: the heart shows cardiomegaly . = 5
        assert_eq!(lcs_len(&c, &r), 5);
        let (p, rr) = (5.0 / 7.0, 5.0 / 8.0);
        let b2 = 1.44;
        assert!((rouge_l(&c, &r) - (1.0 + b2) * p * rr / (rr + b2 * p)).abs() < 1e-12);
    }

    #[test]
    fn reference_order_invariant() {
        let c = toks("mild left opacity .");
        let r1 = toks("severe left opacity .");
        let r2 = toks("mild right opacity is present .");
        assert_eq!(bleu(&c, &[&r1, &r2]), bleu(&c, &[&r2, &r1]));
        assert_eq!(rouge_l_multi(&c, &[&r1, &r2]), rouge_l_multi(&c, &[&r2, &r1]));
    }
}
