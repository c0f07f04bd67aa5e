//! Confidence intervals and standard-error bounds.
//!
//! The bootstrap is a percentile bootstrap over resampled means. Resample
//! `b` draws from its own generator seeded with
//! `derive_seed(seed, "bootstrap", b)`, so resamples can run in parallel and
//! still produce the same interval for the same seed. Quantiles use the
//! nearest-rank rule on the sorted resample means.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, uniform_index};

pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const MIN_RESAMPLES: usize = 1_000;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    PercentileBootstrap,
    NormalApprox,
}

/// Aggregated score with its confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEstimate {
    pub mean: f64,
    pub n: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub method: CiMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resamples: Option<usize>,
}

impl ScoreEstimate {
    /// Distances from the mean to the interval ends, in percentage points.
    pub fn percent_whiskers(&self) -> (f64, f64) {
        ((self.ci_high - self.mean) * 100.0, (self.mean - self.ci_low) * 100.0)
    }

    /// `66.0 (+2.6/-2.5)`.
    pub fn display_percent(&self) -> String {
        let (up, down) = self.percent_whiskers();
        format!("{:.1} (+{:.1}/-{:.1})", self.mean * 100.0, up, down)
    }

    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// 1-based nearest rank `ceil(p * n)` clamped to `[1, n]`, returned 0-based.
fn nearest_rank_index(p: f64, n: usize) -> usize {
    // The epsilon absorbs representation error, e.g. 0.025 * 10000.
    let rank = (p * n as f64 - 1e-9).ceil() as usize;
    rank.clamp(1, n) - 1
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("confidence level {level} not in (0, 1)")));
    }
    Ok(())
}

/// Resampled means, one per resample, in resample-index order.
pub fn bootstrap_means(scores: &[f64], resamples: usize, seed: u64) -> Vec<f64> {
    let n = scores.len();
    (0..resamples as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from_seed(derive_seed(seed, "bootstrap", b));
            let mut sum = 0.0;
            for _ in 0..n {
                sum += scores[uniform_index(&mut rng, n)];
            }
            sum / n as f64
        })
        .collect()
}

/// Percentile bootstrap interval for the mean of `scores`.
///
/// The interval ends are the `(1-level)/2` and `1-(1-level)/2` nearest-rank
/// quantiles of the resampled means. They are widened to contain the sample
/// mean if the resampling distribution happens to sit entirely on one side.
pub fn bootstrap_ci(scores: &[f64], level: f64, resamples: usize, seed: u64) -> Result<ScoreEstimate> {
    if scores.is_empty() {
        return Err(Error::domain("bootstrap needs at least one score"));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::domain(format!("non-finite score {bad}")));
    }
    check_level(level)?;
    if resamples < MIN_RESAMPLES {
        return Err(Error::domain(format!(
            "at least {MIN_RESAMPLES} resamples required, got {resamples}"
        )));
    }

    let point = mean(scores);
    let mut means = bootstrap_means(scores, resamples, seed);
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let lo = means[nearest_rank_index(alpha, resamples)];
    let hi = means[nearest_rank_index(1.0 - alpha, resamples)];

    Ok(ScoreEstimate {
        mean: point,
        n: scores.len(),
        ci_low: lo.min(point),
        ci_high: hi.max(point),
        level,
        method: CiMethod::PercentileBootstrap,
        seed: Some(seed),
        resamples: Some(resamples),
    })
}

/// `θ̂ ± 1.96·s/√n` with the sample standard deviation, clipped to [0, 1].
pub fn normal_approx_ci(scores: &[f64]) -> Result<ScoreEstimate> {
    if scores.is_empty() {
        return Err(Error::domain("normal interval needs at least one score"));
    }
    let n = scores.len();
    let m = mean(scores);
    let sd = if n > 1 {
        (scores.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let hw = normal_ci_halfwidth(sd, n as u64)?;
    Ok(ScoreEstimate {
        mean: m,
        n,
        ci_low: (m - hw).max(0.0),
        ci_high: (m + hw).min(1.0),
        level: DEFAULT_LEVEL,
        method: CiMethod::NormalApprox,
        seed: None,
        resamples: None,
    })
}

/// `σ/√n`.
pub fn standard_error(sigma: f64, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("standard error needs n >= 1"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("invalid standard deviation {sigma}")));
    }
    Ok(sigma / (n as f64).sqrt())
}

/// Rounds to 15 significant digits, the decimal precision an `f64` carries.
/// Keeps results like `sqrt(0.2 * 0.8)` at `0.4` instead of an artifact of
/// binary representation one ulp away.
fn round_to_decimal_precision(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.14e}").parse().unwrap_or(x)
}

/// Largest standard deviation a variable in `[lower, upper]` with mean `mu`
/// can have: `sqrt((upper - mu)(mu - lower))`.
pub fn bhatia_davis_sigma_max(mu: f64, lower: f64, upper: f64) -> Result<f64> {
    if !(lower <= mu && mu <= upper) || !mu.is_finite() {
        return Err(Error::domain(format!("mean {mu} outside [{lower}, {upper}]")));
    }
    Ok(round_to_decimal_precision(((upper - mu) * (mu - lower)).sqrt()))
}

/// Worst-case standard error for scores in [0, 1] with mean `mu`:
/// `sqrt(mu (1 - mu) / n)`.
pub fn se_upper_bound(mu: f64, n: u64) -> Result<f64> {
    standard_error(bhatia_davis_sigma_max(mu, 0.0, 1.0)?, n)
}

/// Half-width of the normal-approximation 95% interval, `1.96·σ/√n`.
pub fn normal_ci_halfwidth(sigma: f64, n: u64) -> Result<f64> {
    Ok(Z_95 * standard_error(sigma, n)?)
}

/// Worst-case standard error at a given expected score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeBound {
    pub mu: f64,
    pub lower: f64,
    pub upper: f64,
    pub sigma_max: f64,
    pub n: u64,
    pub se_max: f64,
}

impl SeBound {
    pub fn new(mu: f64, lower: f64, upper: f64, n: u64) -> Result<Self> {
        let sigma_max = bhatia_davis_sigma_max(mu, lower, upper)?;
        let se_max = standard_error(sigma_max, n)?;
        Ok(Self {
            mu,
            lower,
            upper,
            sigma_max,
            n,
            se_max,
        })
    }

    pub fn unit(mu: f64, n: u64) -> Result<Self> {
        Self::new(mu, 0.0, 1.0, n)
    }
}
