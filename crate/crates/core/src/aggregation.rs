//! Label-to-score mapping and aggregation.
//!
//! Likert categories map to equally spaced scores: strongly-disagree 0.0,
//! disagree 0.25, neutral 0.5, agree 0.75, strongly-agree 1.0. Majority vote
//! works on binarized labels, where only agree and strongly-agree count as
//! positive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotationRecord, SchemeKind, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    Mean,
    MajorityVote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Labeling {
    /// One label per instance.
    Unilabeling,
    /// `k` labels per instance, `k >= 2`.
    Multilabeling { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggregationPolicy {
    pub elicitation: SchemeKind,
    pub combine: Combine,
    pub labeling: Labeling,
}

impl Default for AggregationPolicy {
    /// Unilabeling with Likert elicitation and mean aggregation.
    fn default() -> Self {
        Self {
            elicitation: SchemeKind::Likert5,
            combine: Combine::Mean,
            labeling: Labeling::Unilabeling,
        }
    }
}

impl AggregationPolicy {
    pub fn validate(&self) -> Result<()> {
        if let Labeling::Multilabeling { k } = self.labeling {
            if k < 2 {
                return Err(Error::domain(format!("multilabeling needs k >= 2, got {k}")));
            }
        }
        Ok(())
    }
}

pub const LIKERT_STEP: f64 = 0.25;

pub fn likert_to_score(category: u8) -> Result<f64> {
    if category > 4 {
        return Err(Error::domain(format!("likert category {category} out of range 0..=4")));
    }
    Ok(f64::from(category) * LIKERT_STEP)
}

/// 1 for agree and strongly-agree, 0 otherwise (neutral counts as negative).
pub fn binarize_likert(category: u8) -> Result<u8> {
    if category > 4 {
        return Err(Error::domain(format!("likert category {category} out of range 0..=4")));
    }
    Ok(u8::from(category >= 3))
}

pub fn binary_to_score(category: u8) -> Result<f64> {
    match category {
        0 => Ok(0.0),
        1 => Ok(1.0),
        _ => Err(Error::domain(format!("binary category {category} out of range 0..=1"))),
    }
}

/// Real-valued score of a raw label under `scheme`.
pub fn label_score(scheme: SchemeKind, label: u8) -> Result<f64> {
    match scheme {
        SchemeKind::Likert5 => likert_to_score(label),
        SchemeKind::Binary => binary_to_score(label),
    }
}

/// Binarized label (0 or 1) under `scheme`.
pub fn label_binary(scheme: SchemeKind, label: u8) -> Result<u8> {
    match scheme {
        SchemeKind::Likert5 => binarize_likert(label),
        SchemeKind::Binary => binary_to_score(label).map(|s| s as u8),
    }
}

/// The per-label value fed to [`aggregate_instance`] under `combine`.
pub fn label_value(scheme: SchemeKind, label: u8, combine: Combine) -> Result<f64> {
    match combine {
        Combine::Mean => label_score(scheme, label),
        Combine::MajorityVote => label_binary(scheme, label).map(f64::from),
    }
}

/// Mean of the scores, or the majority of binarized labels: 1.0 or 0.0 on a
/// strict majority, 0.5 on an exact tie.
pub fn aggregate_instance(scores: &[f64], combine: Combine) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::domain("cannot aggregate an empty label list"));
    }
    match combine {
        Combine::Mean => Ok(scores.iter().sum::<f64>() / scores.len() as f64),
        Combine::MajorityVote => {
            let mut ones = 0usize;
            for &s in scores {
                if s == 1.0 {
                    ones += 1;
                } else if s != 0.0 {
                    return Err(Error::domain(format!("majority vote needs binarized labels, got {s}")));
                }
            }
            let zeros = scores.len() - ones;
            Ok(match ones.cmp(&zeros) {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Less => 0.0,
                std::cmp::Ordering::Equal => 0.5,
            })
        }
    }
}

/// Per-aspect outcome of [`score_submission`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectScore {
    pub estimate: f64,
    /// Instance ids in sorted order, parallel to `instance_scores`.
    pub instance_ids: Vec<String>,
    pub instance_scores: Vec<f64>,
}

/// Aggregates labels per instance under `policy`, then averages over
/// instances, for every aspect of the task. Instances without labels are
/// left out rather than imputed.
pub fn score_submission(
    records: &[AnnotationRecord],
    task: &TaskSpec,
    policy: &AggregationPolicy,
) -> Result<BTreeMap<String, AspectScore>> {
    policy.validate()?;
    if let Some(first) = records.first() {
        if let Some(other) = records.iter().find(|r| r.submission_id != first.submission_id) {
            return Err(Error::Inconsistent(format!(
                "records span submissions {} and {}",
                first.submission_id, other.submission_id
            )));
        }
    }

    // aspect -> instance -> label values
    let mut grouped: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    let mut scheme_of: BTreeMap<&str, SchemeKind> = BTreeMap::new();
    for r in records {
        if !task.has_aspect(&r.aspect) {
            return Err(Error::Inconsistent(format!(
                "aspect {:?} is not part of task {}",
                r.aspect, task.task_id
            )));
        }
        match scheme_of.insert(&r.aspect, r.scheme) {
            Some(prev) if prev != r.scheme => {
                return Err(Error::Inconsistent(format!(
                    "aspect {:?} mixes {} and {} labels",
                    r.aspect, prev, r.scheme
                )));
            }
            _ => {}
        }
        if r.scheme != policy.elicitation {
            return Err(Error::Inconsistent(format!(
                "aspect {:?} has {} labels but the policy expects {}",
                r.aspect, r.scheme, policy.elicitation
            )));
        }
        let v = label_value(r.scheme, r.raw_label, policy.combine)?;
        grouped
            .entry(&r.aspect)
            .or_default()
            .entry(&r.instance_id)
            .or_default()
            .push(v);
    }

    let mut out = BTreeMap::new();
    for aspect in task.aspect_names() {
        let Some(instances) = grouped.get(aspect) else {
            return Err(Error::Inconsistent(format!("no annotations for aspect {aspect:?}")));
        };
        let mut instance_ids = Vec::with_capacity(instances.len());
        let mut instance_scores = Vec::with_capacity(instances.len());
        for (id, labels) in instances {
            if policy.labeling == Labeling::Unilabeling && labels.len() != 1 {
                return Err(Error::Inconsistent(format!(
                    "unilabeling expects one label for ({id}, {aspect}), found {}",
                    labels.len()
                )));
            }
            instance_ids.push(id.to_string());
            instance_scores.push(aggregate_instance(labels, policy.combine)?);
        }
        let estimate = instance_scores.iter().sum::<f64>() / instance_scores.len() as f64;
        out.insert(
            aspect.to_string(),
            AspectScore {
                estimate,
                instance_ids,
                instance_scores,
            },
        );
    }
    Ok(out)
}

/// Mean score given to the gold panel per aspect, for paired presentation.
/// Aspects without any gold ratings are omitted.
pub fn score_reference_side(records: &[AnnotationRecord]) -> Result<BTreeMap<String, f64>> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in records {
        if let Some(l) = r.reference_label {
            let e = acc.entry(&r.aspect).or_default();
            e.0 += label_score(r.scheme, l)?;
            e.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(a, (sum, n))| (a.to_string(), sum / n as f64))
        .collect())
}
