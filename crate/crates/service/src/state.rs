//! Leaderboard state as a fold over events.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use humeval_core::dispatch::{AnnotationBatch, DispatchConfig, DispatchEvent, Dispatcher};
use humeval_core::metrics::MetricResult;
use humeval_core::model::{Submission, SubmissionStatus, Usd};
use humeval_core::uncertainty::ScoreEstimate;
use serde::{Deserialize, Serialize};

use crate::ratelimit::{RateLimitConfig, TokenBucket};

/// Seeds fixed when a submission is accepted, enough to replay its scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionSeeds {
    pub sampling: u64,
    pub permutation: u64,
    pub bootstrap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub n_instances: usize,
    pub labels_per_instance: usize,
    pub total_cost: Usd,
    pub worst_case_se: f64,
}

/// First and last day on which labels were collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationWindow {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub submission: Submission,
    #[serde(default)]
    pub system_name: Option<String>,
    pub seeds: Option<SubmissionSeeds>,
    pub metrics: Vec<MetricResult>,
    pub plan: Option<EvalPlan>,
    pub subset: Vec<String>,
    pub batch_ids: Vec<String>,
    pub release_at: Option<DateTime<Utc>>,
    pub human: BTreeMap<String, ScoreEstimate>,
    pub window: Option<AnnotationWindow>,
    pub failure: Option<String>,
    /// Imported result rather than a pipeline run.
    pub fixture: bool,
}

impl SubmissionRecord {
    pub fn id(&self) -> &str {
        &self.submission.submission_id
    }

    pub fn status(&self) -> SubmissionStatus {
        self.submission.status
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SubmissionAccepted {
        submission: Submission,
        system_name: Option<String>,
        seeds: SubmissionSeeds,
        metrics: Vec<MetricResult>,
    },
    FixtureImported {
        record: Box<SubmissionRecord>,
    },
    SubmissionSampled {
        submission_id: String,
        subset: Vec<String>,
        plan: EvalPlan,
    },
    AnnotationScheduled {
        submission_id: String,
        release_at: DateTime<Utc>,
        batches: Vec<AnnotationBatch>,
    },
    Dispatch {
        event: DispatchEvent,
    },
    SubmissionScored {
        submission_id: String,
        human: BTreeMap<String, ScoreEstimate>,
        window: Option<AnnotationWindow>,
    },
    SubmissionFailed {
        submission_id: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Sequence number of the last applied event; 0 when empty.
    pub seq: u64,
    pub submissions: BTreeMap<String, SubmissionRecord>,
    /// Accepted pipeline submissions; numbers submission ids.
    pub accepted: u64,
    pub buckets: BTreeMap<String, TokenBucket>,
    pub dispatcher: Dispatcher,
}

impl State {
    pub fn new(dispatch: DispatchConfig) -> Self {
        Self {
            seq: 0,
            submissions: BTreeMap::new(),
            accepted: 0,
            buckets: BTreeMap::new(),
            dispatcher: Dispatcher::new(dispatch),
        }
    }

    pub fn submission(&self, id: &str) -> Option<&SubmissionRecord> {
        self.submissions.get(id)
    }

    fn advance(&mut self, id: &str, next: SubmissionStatus) -> Option<&mut SubmissionRecord> {
        let rec = self.submissions.get_mut(id)?;
        // Events were validated before they were logged; an illegal move here
        // means a replayed log is out of order, which leaves state unchanged.
        rec.submission.advance(next).ok()?;
        Some(rec)
    }

    /// Folds one event into the state. Unknown ids are ignored so that the
    /// fold is total; event producers validate before logging.
    pub fn apply(&mut self, seq: u64, event: &Event, rate_limit: &RateLimitConfig) {
        self.seq = seq;
        match event {
            Event::SubmissionAccepted {
                submission,
                system_name,
                seeds,
                metrics,
            } => {
                let now = submission.created_at;
                self.buckets
                    .entry(submission.submitter.clone())
                    .or_insert_with(|| TokenBucket::full(rate_limit, now))
                    .take(rate_limit, now);
                self.accepted += 1;
                self.submissions.insert(
                    submission.submission_id.clone(),
                    SubmissionRecord {
                        submission: submission.clone(),
                        system_name: system_name.clone(),
                        seeds: Some(*seeds),
                        metrics: metrics.clone(),
                        plan: None,
                        subset: Vec::new(),
                        batch_ids: Vec::new(),
                        release_at: None,
                        human: BTreeMap::new(),
                        window: None,
                        failure: None,
                        fixture: false,
                    },
                );
            }
            Event::FixtureImported { record } => {
                self.submissions.insert(record.id().to_string(), (**record).clone());
            }
            Event::SubmissionSampled {
                submission_id,
                subset,
                plan,
            } => {
                if let Some(rec) = self.advance(submission_id, SubmissionStatus::Sampled) {
                    rec.subset = subset.clone();
                    rec.plan = Some(plan.clone());
                }
            }
            Event::AnnotationScheduled {
                submission_id,
                release_at,
                batches,
            } => {
                if let Some(rec) = self.advance(submission_id, SubmissionStatus::Annotating) {
                    rec.batch_ids = batches.iter().map(|b| b.batch_id.clone()).collect();
                    rec.release_at = Some(*release_at);
                    self.dispatcher.apply(&DispatchEvent::BatchesCreated {
                        batches: batches.clone(),
                    });
                }
            }
            Event::Dispatch { event } => self.dispatcher.apply(event),
            Event::SubmissionScored {
                submission_id,
                human,
                window,
            } => {
                if let Some(rec) = self.advance(submission_id, SubmissionStatus::Scored) {
                    rec.human = human.clone();
                    rec.window = *window;
                    rec.failure = None;
                }
            }
            Event::SubmissionFailed { submission_id, message } => {
                if let Some(rec) = self.submissions.get_mut(submission_id) {
                    rec.failure = Some(message.clone());
                }
            }
        }
    }
}
