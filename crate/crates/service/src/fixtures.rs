//! Published reference results, loaded as already-scored leaderboard rows.
//!
//! Scores are given in percentage points with asymmetric interval
//! half-widths, as they are usually reported.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use humeval_core::metrics::MetricResult;
use humeval_core::model::{Submission, SubmissionStatus, TaskSpec};
use humeval_core::uncertainty::{CiMethod, ScoreEstimate, DEFAULT_LEVEL};
use humeval_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::state::SubmissionRecord;

pub const REFERENCE_RESULTS_JSON: &str = include_str!("../fixtures/reference_results.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportedScore {
    pub mean: f64,
    pub plus: f64,
    pub minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub task_id: String,
    pub system: String,
    pub created_at: DateTime<Utc>,
    pub human: BTreeMap<String, ReportedScore>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

pub fn parse_fixtures(json: &str) -> Result<Vec<FixtureRow>> {
    serde_json::from_str(json).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn reference_results() -> Vec<FixtureRow> {
    parse_fixtures(REFERENCE_RESULTS_JSON).expect("bundled fixtures parse")
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

pub fn fixture_id(row: &FixtureRow) -> String {
    format!("fixture-{}-{}", row.task_id, slug(&row.system))
}

/// Converts a reported row into a scored record; sample size is the task's
/// evaluation subset size.
pub fn fixture_record(row: &FixtureRow, task: &TaskSpec) -> Result<SubmissionRecord> {
    if row.task_id != task.task_id {
        return Err(Error::Inconsistent(format!(
            "fixture for {} given task {}",
            row.task_id, task.task_id
        )));
    }
    let mut human = BTreeMap::new();
    for (aspect, s) in &row.human {
        if !task.has_aspect(aspect) {
            return Err(Error::Config(format!(
                "fixture {}: unknown aspect {aspect}",
                row.system
            )));
        }
        if !(s.plus >= 0.0 && s.minus >= 0.0) {
            return Err(Error::Config(format!("fixture {}: negative interval", row.system)));
        }
        human.insert(
            aspect.clone(),
            ScoreEstimate {
                mean: s.mean / 100.0,
                n: task.eval_sample_size,
                ci_low: (s.mean - s.minus) / 100.0,
                ci_high: (s.mean + s.plus) / 100.0,
                level: DEFAULT_LEVEL,
                method: CiMethod::PercentileBootstrap,
                seed: None,
                resamples: None,
            },
        );
    }
    let metrics = row
        .metrics
        .iter()
        .map(|(name, v)| MetricResult {
            metric_name: name.clone(),
            corpus_score: *v,
            per_instance_scores: Vec::new(),
            config_fingerprint: "reported".into(),
        })
        .collect();
    Ok(SubmissionRecord {
        submission: Submission {
            submission_id: fixture_id(row),
            task_id: row.task_id.clone(),
            submitter: row.system.clone(),
            created_at: row.created_at,
            predictions: BTreeMap::new(),
            status: SubmissionStatus::Scored,
        },
        system_name: Some(row.system.clone()),
        seeds: None,
        metrics,
        plan: None,
        subset: Vec::new(),
        batch_ids: Vec::new(),
        release_at: None,
        human,
        window: None,
        failure: None,
        fixture: true,
    })
}
