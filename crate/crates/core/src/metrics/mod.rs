//! Reference-based automatic metrics.
//!
//! BLEU is a corpus metric and reports no per-instance scores. ROUGE and
//! METEOR are computed per instance against each reference, keeping the best
//! reference, and averaged. All corpus scores are on a 0-100 scale.

mod bleu;
pub mod external;
mod meteor;
mod rouge;
mod tokenize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bleu::{bleu_corpus, bleu_stats, BleuStats, DEFAULT_MAX_N};
pub use meteor::{meteor_lite, MeteorScore};
pub use rouge::{lcs_len, rouge_l, rouge_n, RougeScore};
pub use tokenize::{tokenize, tokenize_lower};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric_name: String,
    pub corpus_score: f64,
    pub per_instance_scores: Vec<f64>,
    /// Tokenizer, order and smoothing settings the score depends on.
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeVariant {
    N(usize),
    L,
}

impl RougeVariant {
    pub fn name(self) -> String {
        match self {
            RougeVariant::N(n) => format!("rouge{n}"),
            RougeVariant::L => "rougeL".into(),
        }
    }
}

/// Lowercased tokens with punctuation-only tokens removed.
fn rouge_tokens(text: &str) -> Vec<String> {
    tokenize_lower(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect()
}

fn check_lengths(hypotheses: &[String], references: &[Vec<String>]) -> Result<()> {
    if hypotheses.len() != references.len() {
        return Err(Error::domain(format!(
            "{} hypotheses but {} reference lists",
            hypotheses.len(),
            references.len()
        )));
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(Error::domain(format!("instance {i} has no references")));
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn rouge_corpus(hypotheses: &[String], references: &[Vec<String>], variant: RougeVariant) -> Result<MetricResult> {
    check_lengths(hypotheses, references)?;
    let per: Vec<f64> = hypotheses
        .iter()
        .zip(references)
        .map(|(h, refs)| {
            let h = rouge_tokens(h);
            refs.iter()
                .map(|r| {
                    let r = rouge_tokens(r);
                    match variant {
                        RougeVariant::N(n) => rouge_n(&h, &r, n).f,
                        RougeVariant::L => rouge_l(&h, &r).f,
                    }
                })
                .fold(0.0, f64::max)
                * 100.0
        })
        .collect();
    Ok(MetricResult {
        metric_name: variant.name(),
        corpus_score: mean(&per),
        per_instance_scores: per,
        config_fingerprint: format!("{}|tok:13a-lite|case:lower|refs:max", variant.name()),
    })
}

pub fn meteor_corpus(hypotheses: &[String], references: &[Vec<String>]) -> Result<MetricResult> {
    check_lengths(hypotheses, references)?;
    let per: Vec<f64> = hypotheses
        .iter()
        .zip(references)
        .map(|(h, refs)| {
            let h = tokenize_lower(h);
            refs.iter()
                .map(|r| meteor_lite(&h, &tokenize_lower(r)).score)
                .fold(0.0, f64::max)
                * 100.0
        })
        .collect();
    Ok(MetricResult {
        metric_name: "meteor_lite".into(),
        corpus_score: mean(&per),
        per_instance_scores: per,
        config_fingerprint: "meteor_lite|match:exact|case:lower|alpha:0.9|beta:3|gamma:0.5".into(),
    })
}

/// BLEU, ROUGE-1, ROUGE-2, ROUGE-L and METEOR-lite.
pub fn native_suite(hypotheses: &[String], references: &[Vec<String>]) -> Result<Vec<MetricResult>> {
    Ok(vec![
        bleu_corpus(hypotheses, references, DEFAULT_MAX_N)?,
        rouge_corpus(hypotheses, references, RougeVariant::N(1))?,
        rouge_corpus(hypotheses, references, RougeVariant::N(2))?,
        rouge_corpus(hypotheses, references, RougeVariant::L)?,
        meteor_corpus(hypotheses, references)?,
    ])
}
