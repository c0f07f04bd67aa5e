//! The leaderboard service: intake, pipeline and queries over [`State`].
//!
//! Every mutation follows the same path: derive events from the current
//! state, append them to the log as one commit, then fold them in. Reads
//! never touch the log.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use humeval_core::aggregation::{score_submission, AggregationPolicy, Combine, Labeling};
use humeval_core::dispatch::{
    build_batches, schedule_release, AnnotationBackend, Assignment, BatchPlan, BatchStatus, Clock, DispatchEvent,
    LabelSubmission,
};
use humeval_core::metrics::external::{external_metric, ProcessScorer};
use humeval_core::metrics::{native_suite, MetricResult};
use humeval_core::model::{validate_submission, AnnotatorProfile, Submission, SubmissionStatus, TaskSpec, Usd};
use humeval_core::planner::{sample_eval_subset, WORST_CASE_SIGMA};
use humeval_core::rng::derive_seed;
use humeval_core::uncertainty::{bootstrap_ci, ScoreEstimate, DEFAULT_LEVEL};
use humeval_core::Error;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::config::ServiceConfig;
use crate::error::{Result, ServiceError};
use crate::eventlog::{load_snapshot, write_snapshot, Commit, EventLog};
use crate::fixtures::{fixture_id, fixture_record, FixtureRow};
use crate::ratelimit::TokenBucket;
use crate::state::{AnnotationWindow, EvalPlan, Event, State, SubmissionRecord, SubmissionSeeds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitReceipt {
    pub submission_id: String,
    pub status: SubmissionStatus,
    pub metrics: Vec<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric_name: String,
    pub corpus_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub sampled: Vec<String>,
    pub scheduled: Vec<String>,
    pub released_batches: Vec<String>,
    pub expired_leases: usize,
    pub labels_recorded: usize,
    pub rejected_completions: Vec<String>,
    pub scored: Vec<String>,
    pub failed: Vec<String>,
}

impl StepReport {
    pub fn is_idle(&self) -> bool {
        *self == StepReport::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub submission_id: String,
    pub submitter: String,
    pub system_name: Option<String>,
    pub task_id: String,
    pub status: SubmissionStatus,
    pub human: BTreeMap<String, ScoreEstimate>,
    pub metrics: Vec<MetricResult>,
    pub created_at: DateTime<Utc>,
    pub annotation_window: Option<AnnotationWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub task_id: String,
    pub aspect: String,
    /// Scored entries, best first.
    pub ranked: Vec<LeaderboardEntry>,
    /// Entries still in the pipeline, with automatic metrics only.
    pub pending: Vec<LeaderboardEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedView {
    pub sampling: u64,
    /// Withheld until scored: it determines the panel order of paired items.
    pub permutation: Option<u64>,
    pub bootstrap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionView {
    pub submission_id: String,
    pub task_id: String,
    pub submitter: String,
    pub system_name: Option<String>,
    pub status: SubmissionStatus,
    pub created_at: DateTime<Utc>,
    pub seeds: Option<SeedView>,
    pub plan: Option<EvalPlan>,
    pub release_at: Option<DateTime<Utc>>,
    pub progress: Progress,
    pub human: BTreeMap<String, ScoreEstimate>,
    pub metrics: Vec<MetricResult>,
    pub annotation_window: Option<AnnotationWindow>,
    pub failure: Option<String>,
    pub fixture: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub assignment_id: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub commits: u64,
    pub submissions: usize,
}

pub struct Service {
    config: ServiceConfig,
    catalog: Catalog,
    state: State,
    log: EventLog,
    backend: Mutex<Box<dyn AnnotationBackend>>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("data_dir", &self.config.data_dir)
            .field("seq", &self.state.seq)
            .finish()
    }
}

fn summaries(metrics: &[MetricResult]) -> Vec<MetricSummary> {
    metrics
        .iter()
        .map(|m| MetricSummary {
            metric_name: m.metric_name.clone(),
            corpus_score: m.corpus_score,
        })
        .collect()
}

fn policy_for(task: &TaskSpec, k: usize) -> AggregationPolicy {
    AggregationPolicy {
        elicitation: task.elicitation.kind,
        combine: Combine::Mean,
        labeling: if k == 1 {
            Labeling::Unilabeling
        } else {
            Labeling::Multilabeling { k }
        },
    }
}

impl Service {
    /// Restores state from the snapshot and log in `config.data_dir`, then
    /// hands any released but unfinished work back to the backend.
    pub fn open(
        config: ServiceConfig,
        catalog: Catalog,
        backend: Box<dyn AnnotationBackend>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        config.validate()?;
        let dir = config.data_dir.clone();
        let (log, commits) = EventLog::open(&dir, config.fsync)?;
        let mut state = load_snapshot(&dir)?.unwrap_or_else(|| State::new(config.dispatch.clone()));
        let last = commits.last().map_or(0, |c| c.seq);
        if state.seq > last {
            return Err(ServiceError::CorruptLog {
                line: 0,
                message: format!("snapshot at commit {} is ahead of the log ({last})", state.seq),
            });
        }
        state.dispatcher.set_config(config.dispatch.clone());
        let from = state.seq;
        for c in commits.iter().filter(|c| c.seq > from) {
            for e in &c.events {
                state.apply(c.seq, e, &config.rate_limit);
            }
        }
        let svc = Self {
            config,
            catalog,
            state,
            log,
            backend: Mutex::new(backend),
            clock,
        };
        svc.resume_backend()?;
        Ok(svc)
    }

    /// Folds the log from scratch, ignoring any snapshot.
    pub fn replay(config: &ServiceConfig) -> Result<State> {
        let (_, commits) = EventLog::open(&config.data_dir, false)?;
        let mut state = State::new(config.dispatch.clone());
        for c in &commits {
            for e in &c.events {
                state.apply(c.seq, e, &config.rate_limit);
            }
        }
        Ok(state)
    }

    fn resume_backend(&self) -> Result<()> {
        let d = &self.state.dispatcher;
        let mut backend = self.backend.lock().expect("backend lock");
        for batch in self.state.submissions.values().flat_map(|r| r.batch_ids.iter()) {
            let Some(b) = d.batch(batch) else { continue };
            if b.status != BatchStatus::Released {
                continue;
            }
            let open = b.published_where(|it| {
                d.assignment(&it.assignment_id)
                    .is_some_and(|s| !matches!(s.status, humeval_core::dispatch::AssignmentStatus::Complete { .. }))
            });
            if !open.items.is_empty() {
                backend.release(&open)?;
            }
        }
        Ok(())
    }

    fn commit(&mut self, events: Vec<Event>) -> Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        let commit = Commit {
            seq: self.state.seq + 1,
            at: self.clock.now(),
            events,
        };
        self.log.append(&commit)?;
        for e in &commit.events {
            self.state.apply(commit.seq, e, &self.config.rate_limit);
        }
        if commit.seq.is_multiple_of(self.config.snapshot_every) {
            write_snapshot(&self.config.data_dir, &self.state)?;
        }
        Ok(())
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn data_dir(&self) -> PathBuf {
        self.config.data_dir.clone()
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            commits: self.state.seq,
            submissions: self.state.submissions.len(),
        }
    }

    /// Registers or updates an annotator profile.
    pub fn register_annotator(&mut self, profile: AnnotatorProfile) -> Result<()> {
        if self.state.dispatcher.profile(&profile.annotator_id) == Some(&profile) {
            return Ok(());
        }
        let events = self.state.dispatcher.decide_register(profile)?;
        self.commit(events.into_iter().map(|event| Event::Dispatch { event }).collect())
    }

    /// Imports reported results; rows already present are skipped.
    pub fn import_fixtures(&mut self, rows: &[FixtureRow]) -> Result<usize> {
        let mut events = Vec::new();
        let mut seen = BTreeSet::new();
        for row in rows {
            let id = fixture_id(row);
            if self.state.submissions.contains_key(&id) || !seen.insert(id) {
                continue;
            }
            let task = self.catalog.task(&row.task_id)?;
            events.push(Event::FixtureImported {
                record: Box::new(fixture_record(row, task)?),
            });
        }
        let n = events.len();
        self.commit(events)?;
        Ok(n)
    }

    fn automatic_metrics(&self, task: &TaskSpec, predictions: &BTreeMap<String, String>) -> Result<Vec<MetricResult>> {
        let Some(instances) = self.catalog.instances(&task.task_id) else {
            return Ok(Vec::new());
        };
        let ids = self.catalog.test_ids(&task.task_id);
        let hyps: Vec<String> = ids.iter().map(|id| predictions[id].clone()).collect();
        let refs: Vec<Vec<String>> = ids.iter().map(|id| instances[id].references.clone()).collect();
        if refs.iter().any(Vec::is_empty) {
            return Ok(Vec::new());
        }
        let mut metrics = native_suite(&hyps, &refs)?;
        for adapter in &self.config.external_metrics {
            match external_metric(&ProcessScorer, adapter, &ids, &hyps, &refs) {
                Ok(m) => metrics.push(m),
                // Scoring proceeds without an unavailable metric.
                Err(Error::MetricUnavailable(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(metrics)
    }

    /// Validates and accepts a submission, computing automatic metrics
    /// immediately. Human evaluation starts on the next pipeline step.
    pub fn submit(
        &mut self,
        task_id: &str,
        submitter: &str,
        system_name: Option<String>,
        predictions: BTreeMap<String, String>,
    ) -> Result<SubmitReceipt> {
        let task = self.catalog.task(task_id)?.clone();
        if submitter.trim().is_empty() {
            return Err(Error::Domain("submitter must not be empty".into()).into());
        }
        let now = self.clock.now();
        let bucket = self
            .state
            .buckets
            .get(submitter)
            .copied()
            .unwrap_or_else(|| TokenBucket::full(&self.config.rate_limit, now));
        if let Some(wait) = bucket.retry_after(&self.config.rate_limit, now) {
            return Err(ServiceError::RateLimited { retry_after_secs: wait });
        }
        let test_ids: BTreeSet<String> = self.catalog.test_ids(task_id).into_iter().collect();
        let report = validate_submission(&predictions, &task, &test_ids)?;
        if !report.is_ok() {
            return Err(ServiceError::Invalid {
                violations: report.violations.iter().map(|v| v.to_string()).collect(),
            });
        }
        let metrics = self.automatic_metrics(&task, &predictions)?;

        let n = self.state.accepted + 1;
        let seed = self.config.master_seed;
        let seeds = SubmissionSeeds {
            sampling: derive_seed(seed, "sampling", n),
            permutation: derive_seed(seed, "permutation", n),
            bootstrap: derive_seed(seed, "bootstrap", n),
        };
        let submission = Submission {
            submission_id: format!("sub-{n:06}"),
            task_id: task_id.to_string(),
            submitter: submitter.to_string(),
            created_at: now,
            predictions,
            status: SubmissionStatus::Validated,
        };
        let receipt = SubmitReceipt {
            submission_id: submission.submission_id.clone(),
            status: submission.status,
            metrics: summaries(&metrics),
        };
        self.commit(vec![Event::SubmissionAccepted {
            submission,
            system_name,
            seeds,
            metrics,
        }])?;
        Ok(receipt)
    }

    fn in_pipeline(&self, status: SubmissionStatus) -> impl Iterator<Item = &SubmissionRecord> {
        self.state
            .submissions
            .values()
            .filter(move |r| !r.fixture && r.failure.is_none() && r.status() == status)
    }

    fn sample_events(&self, rec: &SubmissionRecord) -> Result<Event> {
        let task = self.catalog.task(&rec.submission.task_id)?;
        let seeds = rec
            .seeds
            .ok_or_else(|| Error::Inconsistent("submission has no seeds".into()))?;
        let ids = self.catalog.test_ids(&task.task_id);
        let n = task.eval_sample_size.min(ids.len());
        let subset = sample_eval_subset(&ids, n, seeds.sampling)?;
        let k = self.config.labels_per_instance;
        let total_cost = task
            .per_instance_cost
            .checked_mul((n * k) as u64)
            .ok_or_else(|| Error::Planning("cost overflow".into()))?;
        Ok(Event::SubmissionSampled {
            submission_id: rec.id().to_string(),
            subset,
            plan: EvalPlan {
                n_instances: n,
                labels_per_instance: k,
                total_cost,
                worst_case_se: WORST_CASE_SIGMA / ((n * k).max(1) as f64).sqrt(),
            },
        })
    }

    fn schedule_events(&self, rec: &SubmissionRecord, now: DateTime<Utc>) -> Result<Event> {
        let task = self.catalog.task(&rec.submission.task_id)?;
        let seeds = rec
            .seeds
            .ok_or_else(|| Error::Inconsistent("submission has no seeds".into()))?;
        let instances = self
            .catalog
            .instances(&task.task_id)
            .ok_or_else(|| Error::Inconsistent(format!("no instances for {}", task.task_id)))?;
        let release_at = schedule_release(&self.config.dispatch.schedule, now)?;
        let payment = self
            .config
            .dispatch
            .payment_per_assignment
            .unwrap_or_else(|| Usd::from_micros(task.per_instance_cost.micros() / task.aspects.len() as u64));
        let plan = BatchPlan {
            labels_per_instance: self.config.labels_per_instance,
            batch_size: self.config.dispatch.batch_size,
            permutation_seed: seeds.permutation,
        };
        let batches = build_batches(&rec.submission, &rec.subset, task, instances, plan, release_at, payment)?;
        self.state.dispatcher.decide_create(batches.clone())?;
        Ok(Event::AnnotationScheduled {
            submission_id: rec.id().to_string(),
            release_at,
            batches,
        })
    }

    fn score_event(&self, rec: &SubmissionRecord) -> Result<Event> {
        let task = self.catalog.task(&rec.submission.task_id)?;
        let seeds = rec
            .seeds
            .ok_or_else(|| Error::Inconsistent("submission has no seeds".into()))?;
        let records = self.state.dispatcher.records_for(rec.id());
        let policy = policy_for(task, self.config.labels_per_instance);
        let scores = score_submission(&records, task, &policy)?;
        let mut human = BTreeMap::new();
        for (aspect, s) in scores {
            let est = bootstrap_ci(
                &s.instance_scores,
                DEFAULT_LEVEL,
                self.config.bootstrap_resamples,
                derive_seed(seeds.bootstrap, &aspect, 0),
            )?;
            human.insert(aspect, est);
        }
        let window = records
            .iter()
            .map(|r| r.day_tag)
            .fold(None, |acc: Option<AnnotationWindow>, d| {
                Some(match acc {
                    None => AnnotationWindow { first: d, last: d },
                    Some(w) => AnnotationWindow {
                        first: w.first.min(d),
                        last: w.last.max(d),
                    },
                })
            });
        Ok(Event::SubmissionScored {
            submission_id: rec.id().to_string(),
            human,
            window,
        })
    }

    fn failed(id: &str, e: impl std::fmt::Display) -> Event {
        Event::SubmissionFailed {
            submission_id: id.to_string(),
            message: e.to_string(),
        }
    }

    /// Advances every submission whose inputs are ready by one stage and
    /// exchanges work with the backend. Running it again without new input
    /// changes nothing.
    pub fn run_pipeline_step(&mut self) -> Result<StepReport> {
        let now = self.clock.now();
        let mut report = StepReport::default();

        let mut events = Vec::new();
        for rec in self.in_pipeline(SubmissionStatus::Validated) {
            match self.sample_events(rec) {
                Ok(e) => {
                    report.sampled.push(rec.id().to_string());
                    events.push(e);
                }
                Err(e) => {
                    report.failed.push(rec.id().to_string());
                    events.push(Self::failed(rec.id(), e));
                }
            }
        }
        self.commit(events)?;

        let mut events = Vec::new();
        for rec in self.in_pipeline(SubmissionStatus::Sampled) {
            match self.schedule_events(rec, now) {
                Ok(e) => {
                    report.scheduled.push(rec.id().to_string());
                    events.push(e);
                }
                Err(e) => {
                    report.failed.push(rec.id().to_string());
                    events.push(Self::failed(rec.id(), e));
                }
            }
        }
        self.commit(events)?;

        let released = self.state.dispatcher.decide_release(now);
        self.commit(
            released
                .iter()
                .cloned()
                .map(|event| Event::Dispatch { event })
                .collect(),
        )?;
        {
            let mut backend = self.backend.lock().expect("backend lock");
            for e in &released {
                if let DispatchEvent::BatchReleased { batch_id, .. } = e {
                    let batch = self.state.dispatcher.batch(batch_id).expect("released batch exists");
                    backend.release(&batch.published())?;
                    report.released_batches.push(batch_id.clone());
                }
            }
        }

        let expired = self.state.dispatcher.decide_expire(now);
        report.expired_leases = expired.len();
        self.commit(expired.iter().cloned().map(|event| Event::Dispatch { event }).collect())?;
        let completions = {
            let mut backend = self.backend.lock().expect("backend lock");
            for e in &expired {
                if let DispatchEvent::LeaseExpired { assignment_id } = e {
                    backend.expire(assignment_id)?;
                }
            }
            backend.poll(now)?
        };

        // Completions are checked in order against a scratch copy so later
        // ones see the effect of earlier ones, then committed together.
        let mut scratch = self.state.dispatcher.clone();
        let mut events = Vec::new();
        for c in &completions {
            match scratch.decide_completion(c, now) {
                Ok(evs) => {
                    for e in evs {
                        scratch.apply(&e);
                        report.labels_recorded += 1;
                        events.push(Event::Dispatch { event: e });
                    }
                }
                Err(_) => report.rejected_completions.push(c.assignment_id.clone()),
            }
        }
        self.commit(events)?;

        let mut events = Vec::new();
        for rec in self.in_pipeline(SubmissionStatus::Annotating) {
            let (done, total) = self.state.dispatcher.progress(rec.id());
            if total == 0 || done < total {
                continue;
            }
            match self.score_event(rec) {
                Ok(e) => {
                    report.scored.push(rec.id().to_string());
                    events.push(e);
                }
                Err(e) => {
                    report.failed.push(rec.id().to_string());
                    events.push(Self::failed(rec.id(), e));
                }
            }
        }
        self.commit(events)?;
        Ok(report)
    }

    /// Runs pipeline steps until one makes no progress, at most `max` times.
    pub fn run_until_idle(&mut self, max: usize) -> Result<Vec<StepReport>> {
        let mut out = Vec::new();
        for _ in 0..max {
            let r = self.run_pipeline_step()?;
            let idle = r.is_idle();
            out.push(r);
            if idle {
                break;
            }
        }
        Ok(out)
    }

    fn entry(rec: &SubmissionRecord) -> LeaderboardEntry {
        LeaderboardEntry {
            submission_id: rec.id().to_string(),
            submitter: rec.submission.submitter.clone(),
            system_name: rec.system_name.clone(),
            task_id: rec.submission.task_id.clone(),
            status: rec.status(),
            human: if rec.status() == SubmissionStatus::Scored {
                rec.human.clone()
            } else {
                BTreeMap::new()
            },
            metrics: rec.metrics.clone(),
            created_at: rec.submission.created_at,
            annotation_window: rec.window,
        }
    }

    /// Scored entries ranked by the aspect's mean, descending; ties go to the
    /// earlier submission. `aspect` defaults to the task's first aspect.
    pub fn get_leaderboard(&self, task_id: &str, aspect: Option<&str>) -> Result<Leaderboard> {
        let task = self.catalog.task(task_id)?;
        let aspect = match aspect {
            Some(a) if task.has_aspect(a) => a.to_string(),
            Some(a) => {
                return Err(Error::Domain(format!("task {task_id} has no aspect {a:?}")).into());
            }
            None => task.aspects[0].name.clone(),
        };
        let mut ranked = Vec::new();
        let mut pending = Vec::new();
        for rec in self
            .state
            .submissions
            .values()
            .filter(|r| r.submission.task_id == task_id)
        {
            let entry = Self::entry(rec);
            if entry.human.contains_key(&aspect) {
                ranked.push(entry);
            } else {
                pending.push(entry);
            }
        }
        ranked.sort_by(|a, b| {
            b.human[&aspect]
                .mean
                .total_cmp(&a.human[&aspect].mean)
                .then(a.created_at.cmp(&b.created_at))
                .then(a.submission_id.cmp(&b.submission_id))
        });
        pending.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then(a.submission_id.cmp(&b.submission_id))
        });
        Ok(Leaderboard {
            task_id: task_id.to_string(),
            aspect,
            ranked,
            pending,
        })
    }

    pub fn get_submission(&self, submission_id: &str) -> Result<SubmissionView> {
        let rec = self.state.submission(submission_id).ok_or_else(|| Error::NotFound {
            kind: "submission",
            id: submission_id.to_string(),
        })?;
        let (completed, total) = self.state.dispatcher.progress(submission_id);
        let scored = rec.status() == SubmissionStatus::Scored;
        Ok(SubmissionView {
            submission_id: rec.id().to_string(),
            task_id: rec.submission.task_id.clone(),
            submitter: rec.submission.submitter.clone(),
            system_name: rec.system_name.clone(),
            status: rec.status(),
            created_at: rec.submission.created_at,
            seeds: rec.seeds.map(|s| SeedView {
                sampling: s.sampling,
                permutation: scored.then_some(s.permutation),
                bootstrap: s.bootstrap,
            }),
            plan: rec.plan.clone(),
            release_at: rec.release_at,
            progress: Progress { completed, total },
            human: if scored { rec.human.clone() } else { BTreeMap::new() },
            metrics: rec.metrics.clone(),
            annotation_window: rec.window,
            failure: rec.failure.clone(),
            fixture: rec.fixture,
        })
    }

    pub fn next_assignment(&mut self, annotator_id: &str) -> Result<Option<Assignment>> {
        let now = self.clock.now();
        let (events, assignment) = self.state.dispatcher.decide_assign_next(annotator_id, now)?;
        self.commit(events.into_iter().map(|event| Event::Dispatch { event }).collect())?;
        Ok(assignment)
    }

    pub fn record_label(
        &mut self,
        assignment_id: &str,
        annotator_id: &str,
        label: LabelSubmission,
        elapsed: Option<f64>,
    ) -> Result<LabelAck> {
        let now = self.clock.now();
        let (events, _) =
            self.state
                .dispatcher
                .decide_record_label(assignment_id, annotator_id, label, now, elapsed)?;
        let status = if events.is_empty() {
            "already_recorded"
        } else {
            "recorded"
        };
        self.commit(events.into_iter().map(|event| Event::Dispatch { event }).collect())?;
        Ok(LabelAck {
            assignment_id: assignment_id.to_string(),
            status: status.into(),
        })
    }
}
