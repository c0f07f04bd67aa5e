//! METEOR restricted to exact (case-folded) unigram matching. There is no
//! stemming or synonym stage; results are fingerprinted as `meteor_lite`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorScore {
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_mean: f64,
    pub penalty: f64,
    pub score: f64,
}

/// Aligns each hypothesis token to an unused identical reference token,
/// preferring the position right after the previous alignment so that runs
/// stay contiguous. Returns the aligned reference position per hypothesis
/// token.
fn align(hypothesis: &[String], reference: &[String]) -> Vec<Option<usize>> {
    let mut used = vec![false; reference.len()];
    let mut last: Option<usize> = None;
    hypothesis
        .iter()
        .map(|tok| {
            let next = last
                .map(|p| p + 1)
                .filter(|&p| p < reference.len() && !used[p] && &reference[p] == tok);
            let pos = next.or_else(|| (0..reference.len()).find(|&p| !used[p] && &reference[p] == tok));
            if let Some(p) = pos {
                used[p] = true;
            }
            last = pos;
            pos
        })
        .collect()
}

/// Number of maximal runs of aligned tokens that are adjacent in both texts.
fn count_chunks(alignment: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for a in alignment {
        match (prev, a) {
            (Some(p), Some(q)) if *q == p + 1 => {}
            (_, Some(_)) => chunks += 1,
            _ => {}
        }
        prev = *a;
    }
    chunks
}

pub fn meteor_lite(hypothesis: &[String], reference: &[String]) -> MeteorScore {
    let alignment = align(hypothesis, reference);
    let matches = alignment.iter().flatten().count();
    if matches == 0 {
        return MeteorScore {
            matches: 0,
            chunks: 0,
            precision: 0.0,
            recall: 0.0,
            f_mean: 0.0,
            penalty: 0.0,
            score: 0.0,
        };
    }
    let chunks = count_chunks(&alignment);
    let p = matches as f64 / hypothesis.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    MeteorScore {
        matches,
        chunks,
        precision: p,
        recall: r,
        f_mean,
        penalty,
        score: f_mean * (1.0 - penalty),
    }
}
