use serde::{Deserialize, Serialize};

use super::bleu::ngram_counts;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    /// Set when neither text is long enough to contain an n-gram.
    pub degenerate: bool,
}

impl RougeScore {
    fn from_counts(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        let precision = if hyp_total == 0 {
            0.0
        } else {
            overlap as f64 / hyp_total as f64
        };
        let recall = if ref_total == 0 {
            0.0
        } else {
            overlap as f64 / ref_total as f64
        };
        Self {
            precision,
            recall,
            f: f_measure(precision, recall),
            degenerate: false,
        }
    }
}

fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// N-gram overlap with clipped counts.
pub fn rouge_n(hypothesis: &[String], reference: &[String], n: usize) -> RougeScore {
    if n == 0 || (hypothesis.len() < n && reference.len() < n) {
        return RougeScore {
            precision: 0.0,
            recall: 0.0,
            f: 0.0,
            degenerate: true,
        };
    }
    let h = ngram_counts(hypothesis, n);
    let r = ngram_counts(reference, n);
    let overlap = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    RougeScore::from_counts(overlap, h.values().sum(), r.values().sum())
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
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

/// LCS-based precision, recall and F-measure.
pub fn rouge_l(hypothesis: &[String], reference: &[String]) -> RougeScore {
    RougeScore::from_counts(lcs_len(hypothesis, reference), hypothesis.len(), reference.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn rouge_l_examples() {
        assert_eq!(rouge_l(&t("a b c"), &t("a b c")).f, 1.0);
        assert_eq!(rouge_l(&t("a b c"), &t("x y z")).f, 0.0);
        let s = rouge_l(&t("a b c d"), &t("a c d e"));
        assert_eq!(lcs_len(&t("a b c d"), &t("a c d e")), 3);
        assert_eq!((s.precision, s.recall, s.f), (0.75, 0.75, 0.75));
        assert_eq!(rouge_l(&[], &t("a")).f, 0.0);
    }

    #[test]
    fn rouge_n_examples() {
        assert_eq!(rouge_n(&t("a b c"), &t("a b c"), 2).f, 1.0);
        let s = rouge_n(&t("a b c"), &t("b c d"), 2);
        assert_eq!((s.precision, s.recall, s.f), (0.5, 0.5, 0.5));
        assert_eq!(rouge_n(&t("a b"), &t("c d"), 1).f, 0.0);
        let s = rouge_n(&t("a b"), &t("a b"), 3);
        assert!(s.degenerate);
        assert_eq!(s.f, 0.0);
    }

    #[test]
    fn clipping() {
        let s = rouge_n(&t("the the the"), &t("the cat"), 1);
        assert_eq!(s.precision, 1.0 / 3.0);
        assert_eq!(s.recall, 0.5);
    }
}
