//! Annotation-policy simulator.
//!
//! Simulated annotators see each instance's latent quality in [0, 1], add
//! their own bias and Gaussian noise, clamp to [0, 1] and report the nearest
//! category of the elicitation scheme. Pools of labels are then resampled
//! under two budget-matched policies:
//!
//! * multilabeling: `n / k` instances drawn with replacement, all `k` labels
//!   of each kept;
//! * unilabeling: `n` instances drawn with replacement, one of the `k`
//!   labels of each drawn at random.
//!
//! Both policies consume `n` labels per round.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_instance, label_value, Combine};
use crate::error::{Error, Result};
use crate::model::{AnnotationRecord, PresentationKey, SchemeKind};
use crate::rng::{derive_seed, rng_from_seed, uniform_index};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorModel {
    /// Added to the latent score before discretization.
    pub bias: f64,
    pub noise_sd: f64,
}

impl AnnotatorModel {
    pub fn exact() -> Self {
        Self {
            bias: 0.0,
            noise_sd: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) || !self.bias.is_finite() {
            return Err(Error::Config(format!("invalid annotator model {self:?}")));
        }
        Ok(())
    }

    /// Draws one label for an item of latent quality `truth`.
    pub fn label<R: Rng + ?Sized>(&self, truth: f64, scheme: SchemeKind, rng: &mut R) -> u8 {
        let noise = if self.noise_sd > 0.0 {
            Normal::new(0.0, self.noise_sd).expect("validated noise sd").sample(rng)
        } else {
            0.0
        };
        discretize(truth + self.bias + noise, scheme)
    }
}

/// Nearest category to a latent value clamped into [0, 1].
pub fn discretize(latent: f64, scheme: SchemeKind) -> u8 {
    let top = (scheme.num_categories() - 1) as f64;
    let x = if latent.is_nan() { 0.0 } else { latent.clamp(0.0, 1.0) };
    (x * top).round() as u8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedAnnotator {
    pub annotator_id: String,
    pub model: AnnotatorModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentInstance {
    pub instance_id: String,
    pub quality: f64,
}

/// Fields stamped on every simulated record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordContext {
    pub submission_id: String,
    pub aspect: String,
    pub day_tag: NaiveDate,
}

/// Labels every instance `k` times. Instance `i` is labeled by annotators
/// `i, i+1, ..., i+k-1` (mod pool size), so the `k` labels come from
/// distinct annotators.
pub fn simulate_annotation_pool(
    instances: &[LatentInstance],
    annotators: &[SimulatedAnnotator],
    k: usize,
    scheme: SchemeKind,
    seed: u64,
    ctx: &RecordContext,
) -> Result<Vec<AnnotationRecord>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if annotators.len() < k {
        return Err(Error::Config(format!(
            "{} annotators cannot supply {k} distinct labels per instance",
            annotators.len()
        )));
    }
    for a in annotators {
        a.model.validate()?;
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(instances.len() * k);
    for (i, inst) in instances.iter().enumerate() {
        for j in 0..k {
            let a = &annotators[(i + j) % annotators.len()];
            out.push(AnnotationRecord {
                submission_id: ctx.submission_id.clone(),
                instance_id: inst.instance_id.clone(),
                aspect: ctx.aspect.clone(),
                annotator_id: a.annotator_id.clone(),
                raw_label: a.model.label(inst.quality, scheme, &mut rng),
                scheme,
                day_tag: ctx.day_tag,
                presentation_key: PresentationKey::Unpaired,
                reference_label: None,
                elapsed: None,
            });
        }
    }
    Ok(out)
}

/// Raw labels grouped per instance, in instance-id order.
pub fn group_labels(records: &[AnnotationRecord]) -> Vec<Vec<u8>> {
    let mut by: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for r in records {
        by.entry(&r.instance_id).or_default().push(r.raw_label);
    }
    by.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Unilabeling,
    Multilabeling,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Unilabeling => "unilabeling",
            Policy::Multilabeling => "multilabeling",
        }
    }
}

fn uniform_k(groups: &[Vec<u8>]) -> Result<usize> {
    let k = groups.first().map(Vec::len).unwrap_or(0);
    if k == 0 {
        return Err(Error::Config("no labeled instances".into()));
    }
    if groups.iter().any(|g| g.len() != k) {
        return Err(Error::Config("every instance needs the same number of labels".into()));
    }
    Ok(k)
}

/// Submission-level scores of `rounds` resampling rounds under `policy`.
/// Round `r` uses the generator seeded with `derive_seed(seed, "round", r)`.
pub fn resample_policy_scores(
    groups: &[Vec<u8>],
    scheme: SchemeKind,
    combine: Combine,
    policy: Policy,
    rounds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let k = uniform_k(groups)?;
    if rounds == 0 {
        return Err(Error::Config("rounds must be at least 1".into()));
    }
    let values: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| g.iter().map(|&l| label_value(scheme, l, combine)).collect())
        .collect::<Result<_>>()?;
    let n = values.len();

    match policy {
        Policy::Multilabeling => {
            if k < 2 {
                return Err(Error::Config("multilabeling needs k >= 2".into()));
            }
            let per_instance: Vec<f64> = values
                .iter()
                .map(|v| aggregate_instance(v, combine))
                .collect::<Result<_>>()?;
            let draws = (n / k).max(1);
            Ok((0..rounds as u64)
                .into_par_iter()
                .map(|r| {
                    let mut rng = rng_from_seed(derive_seed(seed, "round", r));
                    let sum: f64 = (0..draws).map(|_| per_instance[uniform_index(&mut rng, n)]).sum();
                    sum / draws as f64
                })
                .collect())
        }
        Policy::Unilabeling => Ok((0..rounds as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng_from_seed(derive_seed(seed, "round", r));
                let mut sum = 0.0;
                for _ in 0..n {
                    let i = uniform_index(&mut rng, n);
                    let j = uniform_index(&mut rng, k);
                    sum += values[i][j];
                }
                sum / n as f64
            })
            .collect()),
    }
}

/// Analytic variance of the round score under both policies for a design
/// with between-instance variance `sigma_b2`, within-instance label variance
/// `sigma_w2`, `x` multilabeled instances and `k` labels per instance.
/// Returns `(var_multi, var_uni)`.
pub fn closed_form_variance(sigma_b2: f64, sigma_w2: f64, x: usize, k: usize) -> Result<(f64, f64)> {
    if x == 0 || k == 0 {
        return Err(Error::domain("x and k must be positive"));
    }
    if sigma_w2 < 0.0 || !sigma_w2.is_finite() || !sigma_b2.is_finite() {
        return Err(Error::domain("variances must be finite and sigma_w2 >= 0"));
    }
    let kx = (k * x) as f64;
    let var_multi = (k as f64 * sigma_b2 + sigma_w2) / kx;
    let var_uni = (sigma_b2 + sigma_w2) / kx;
    Ok((var_multi, var_uni))
}

/// One-way decomposition of equally sized label groups into
/// `(sigma_b2, sigma_w2)`: `sigma_w2` is the unbiased pooled within-group
/// variance and `sigma_b2 = Var(group means) - sigma_w2 / k`, using
/// population variance across groups. With these, [`closed_form_variance`]
/// gives the exact variance of the resampled score for the observed pool.
pub fn variance_components(values: &[Vec<f64>]) -> Result<(f64, f64)> {
    let k = values.first().map(Vec::len).unwrap_or(0);
    if k == 0 || values.iter().any(|g| g.len() != k) {
        return Err(Error::domain("groups must be non-empty and equally sized"));
    }
    let n = values.len() as f64;
    let means: Vec<f64> = values.iter().map(|g| g.iter().sum::<f64>() / k as f64).collect();
    let grand = means.iter().sum::<f64>() / n;
    let var_means = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / n;
    let sigma_w2 = if k > 1 {
        values
            .iter()
            .zip(&means)
            .map(|(g, m)| g.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1) as f64)
            .sum::<f64>()
            / n
    } else {
        0.0
    };
    Ok((var_means - sigma_w2 / k as f64, sigma_w2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthDistribution {
    Beta { alpha: f64, beta: f64 },
    Constant { value: f64 },
}

impl TruthDistribution {
    fn sample_all(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        match *self {
            TruthDistribution::Beta { alpha, beta } => {
                let d = Beta::new(alpha, beta).map_err(|e| Error::Config(format!("beta({alpha}, {beta}): {e}")))?;
                Ok((0..n).map(|_| d.sample(&mut rng)).collect())
            }
            TruthDistribution::Constant { value } => Ok(vec![value.clamp(0.0, 1.0); n]),
        }
    }
}

/// Average expert score reported for the case-study system. Kept for
/// comparison with simulated means; nothing here derives it.
pub const EXPERT_REFERENCE_SCORE: f64 = 0.803;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_instances: usize,
    /// Labels per instance in the pooled data; multilabeling uses
    /// `n_instances / k` instances with all `k` labels each.
    pub k: usize,
    pub rounds: usize,
    pub days: Vec<NaiveDate>,
    pub seed: u64,
    pub truth: TruthDistribution,
    pub n_annotators: usize,
    /// Spread of per-annotator bias.
    pub bias_sd: f64,
    pub noise_sd: f64,
    /// Shift of every latent score per day index.
    #[serde(default)]
    pub drift_per_day: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_instances: 360,
            k: 3,
            rounds: 500,
            days: vec![
                NaiveDate::from_ymd_opt(2021, 3, 2).unwrap(),
                NaiveDate::from_ymd_opt(2021, 3, 3).unwrap(),
                NaiveDate::from_ymd_opt(2021, 3, 4).unwrap(),
            ],
            seed: 0,
            truth: TruthDistribution::Beta { alpha: 4.0, beta: 2.0 },
            n_annotators: 15,
            bias_sd: 0.05,
            noise_sd: 0.2,
            drift_per_day: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.k == 0 || self.n_instances == 0 {
            return Err(Error::Config("rounds, k and n_instances must be at least 1".into()));
        }
        if self.k < 2 {
            return Err(Error::Config(
                "the case study compares against multilabeling, k >= 2".into(),
            ));
        }
        if self.n_instances < self.k {
            return Err(Error::Config("n_instances must be at least k".into()));
        }
        if self.days.is_empty() {
            return Err(Error::Config("at least one day is required".into()));
        }
        if self.n_annotators < self.k {
            return Err(Error::Config("fewer annotators than labels per instance".into()));
        }
        if [self.bias_sd, self.noise_sd].iter().any(|s| s.is_nan() || *s < 0.0) {
            return Err(Error::Config("standard deviations must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub scheme: SchemeKind,
    pub combine: Combine,
    pub policy: Policy,
    pub day: NaiveDate,
    pub rounds: usize,
    pub mean: f64,
    pub sd: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingVariance {
    pub scheme: SchemeKind,
    pub combine: Combine,
    pub policy: Policy,
    /// Mean over days of the per-day round-score variance.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub config: SimConfig,
    pub cells: Vec<CellStats>,
    pub settings: Vec<SettingVariance>,
    /// Mean cell variance per policy across every scheme, combine and day.
    pub by_policy: BTreeMap<Policy, f64>,
}

impl VarianceReport {
    pub fn setting(&self, scheme: SchemeKind, combine: Combine, policy: Policy) -> Option<&SettingVariance> {
        self.settings
            .iter()
            .find(|s| s.scheme == scheme && s.combine == combine && s.policy == policy)
    }

    /// Tab-separated rows: configuration, day, mean, sd.
    pub fn to_table(&self) -> String {
        let mut s = String::from("scheme\tcombine\tpolicy\tday\tmean\tsd\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
                c.scheme,
                combine_name(c.combine),
                c.policy.name(),
                c.day,
                c.mean,
                c.sd
            );
        }
        s
    }
}

pub fn combine_name(c: Combine) -> &'static str {
    match c {
        Combine::Mean => "mean",
        Combine::MajorityVote => "majority",
    }
}

fn summarize(scores: &[f64]) -> (f64, f64, f64, f64) {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = if scores.len() > 1 {
        scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, var, min, max)
}

/// Annotator population drawn from the config: biases ~ N(0, bias_sd),
/// shared noise level.
pub fn sample_annotators(config: &SimConfig) -> Result<Vec<SimulatedAnnotator>> {
    let mut rng = rng_from_seed(derive_seed(config.seed, "annotators", 0));
    let bias = Normal::new(0.0, config.bias_sd).map_err(|e| Error::Config(e.to_string()))?;
    Ok((0..config.n_annotators)
        .map(|i| SimulatedAnnotator {
            annotator_id: format!("sim-{i:03}"),
            model: AnnotatorModel {
                bias: bias.sample(&mut rng),
                noise_sd: config.noise_sd,
            },
        })
        .collect())
}

const SCHEMES: [SchemeKind; 2] = [SchemeKind::Likert5, SchemeKind::Binary];
const COMBINES: [Combine; 2] = [Combine::Mean, Combine::MajorityVote];
const POLICIES: [Policy; 2] = [Policy::Unilabeling, Policy::Multilabeling];

/// Runs every scheme × combine × policy × day configuration. Latent
/// qualities and the annotator population are shared across days; each day
/// and scheme draws fresh labels from its own seed stream.
pub fn run_case_study(config: &SimConfig) -> Result<VarianceReport> {
    config.validate()?;
    let truth = config
        .truth
        .sample_all(config.n_instances, derive_seed(config.seed, "truth", 0))?;
    let annotators = sample_annotators(config)?;

    let mut cells = Vec::new();
    for scheme in SCHEMES {
        for combine in COMBINES {
            for policy in POLICIES {
                for (d, day) in config.days.iter().enumerate() {
                    let shift = config.drift_per_day * d as f64;
                    let instances: Vec<LatentInstance> = truth
                        .iter()
                        .enumerate()
                        .map(|(i, q)| LatentInstance {
                            instance_id: format!("inst-{i:05}"),
                            quality: q + shift,
                        })
                        .collect();
                    let ctx = RecordContext {
                        submission_id: "case-study".into(),
                        aspect: "satisfaction".into(),
                        day_tag: *day,
                    };
                    let label_seed = derive_seed(config.seed, &format!("labels:{day}:{scheme}"), d as u64);
                    let records =
                        simulate_annotation_pool(&instances, &annotators, config.k, scheme, label_seed, &ctx)?;
                    let groups = group_labels(&records);
                    let stream = format!("resample:{day}:{scheme}:{}:{}", combine_name(combine), policy.name());
                    let scores = resample_policy_scores(
                        &groups,
                        scheme,
                        combine,
                        policy,
                        config.rounds,
                        derive_seed(config.seed, &stream, d as u64),
                    )?;
                    let (mean, variance, min, max) = summarize(&scores);
                    cells.push(CellStats {
                        scheme,
                        combine,
                        policy,
                        day: *day,
                        rounds: scores.len(),
                        mean,
                        sd: variance.sqrt(),
                        variance,
                        min,
                        max,
                    });
                }
            }
        }
    }

    let mut settings = Vec::new();
    for scheme in SCHEMES {
        for combine in COMBINES {
            for policy in POLICIES {
                let vs: Vec<f64> = cells
                    .iter()
                    .filter(|c| c.scheme == scheme && c.combine == combine && c.policy == policy)
                    .map(|c| c.variance)
                    .collect();
                settings.push(SettingVariance {
                    scheme,
                    combine,
                    policy,
                    variance: vs.iter().sum::<f64>() / vs.len() as f64,
                });
            }
        }
    }
    let by_policy = POLICIES
        .iter()
        .map(|&p| {
            let vs: Vec<f64> = cells.iter().filter(|c| c.policy == p).map(|c| c.variance).collect();
            (p, vs.iter().sum::<f64>() / vs.len() as f64)
        })
        .collect();

    Ok(VarianceReport {
        config: config.clone(),
        cells,
        settings,
        by_policy,
    })
}
