use std::collections::HashMap;

use crate::error::{Error, Result};

use super::tokenize::tokenize;
use super::MetricResult;

pub const DEFAULT_MAX_N: usize = 4;

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Pooled corpus statistics: clipped matches and totals per order, plus
/// hypothesis and effective reference length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    fn new(max_n: usize) -> Self {
        Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            ..Default::default()
        }
    }

    /// Clipped precision for order `n` (1-based).
    pub fn precision(&self, n: usize) -> f64 {
        let t = self.totals[n - 1];
        if t == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / t as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        }
    }

    /// BLEU on the 0-100 scale, unsmoothed.
    pub fn score(&self) -> f64 {
        if self.matches.contains(&0) {
            return 0.0;
        }
        let max_n = self.matches.len();
        let log_mean = (1..=max_n).map(|n| self.precision(n).ln()).sum::<f64>() / max_n as f64;
        100.0 * self.brevity_penalty() * log_mean.exp()
    }

    fn add_sentence(&mut self, hyp: &[String], refs: &[Vec<String>]) {
        self.hyp_len += hyp.len();
        // closest reference length, shorter on ties
        self.ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
            .unwrap_or(0);
        for n in 1..=self.matches.len() {
            let hyp_counts = ngram_counts(hyp, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in &hyp_counts {
                self.matches[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
                self.totals[n - 1] += c;
            }
        }
    }
}

/// Accumulates pooled statistics over tokenized sentences.
pub fn bleu_stats(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>], max_n: usize) -> Result<BleuStats> {
    if hypotheses.len() != references.len() {
        return Err(Error::domain(format!(
            "{} hypotheses but {} reference lists",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::domain("max n-gram order must be at least 1"));
    }
    let mut stats = BleuStats::new(max_n);
    for (i, (h, refs)) in hypotheses.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(Error::domain(format!("instance {i} has no references")));
        }
        stats.add_sentence(h, refs);
    }
    Ok(stats)
}

/// Corpus BLEU: n-gram counts are pooled over the corpus before taking
/// precisions. Case-sensitive, no smoothing.
pub fn bleu_corpus(hypotheses: &[String], reference_lists: &[Vec<String>], max_n: usize) -> Result<MetricResult> {
    let hyps: Vec<Vec<String>> = hypotheses.iter().map(|h| tokenize(h)).collect();
    let refs: Vec<Vec<Vec<String>>> = reference_lists
        .iter()
        .map(|rs| rs.iter().map(|r| tokenize(r)).collect())
        .collect();
    let stats = bleu_stats(&hyps, &refs, max_n)?;
    Ok(MetricResult {
        metric_name: "bleu".into(),
        corpus_score: stats.score(),
        per_instance_scores: Vec::new(),
        config_fingerprint: format!("bleu|n:{max_n}|tok:13a-lite|case:mixed|smooth:none"),
    })
}
