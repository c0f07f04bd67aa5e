//! Annotation dispatch.
//!
//! A sampled submission is expanded into assignments, one per
//! (instance, aspect, replica), grouped into batches that are released at
//! the scheduled time. Annotators either pull work through leases
//! ([`Dispatcher::assign_next`], [`Dispatcher::record_label`]) or a backend
//! pushes completed work ([`Dispatcher::complete`]).
//!
//! The dispatcher is event-sourced: every `decide_*` method validates a
//! request against the current state and returns the events it implies
//! without mutating anything, and [`Dispatcher::apply`] folds an event into
//! the state. Owners that persist events call `decide_*`, write the events,
//! then `apply` them.

mod backend;
mod clock;
mod qualify;
mod schedule;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AnnotationRecord, AnnotatorProfile, Instance, PresentationKey, SchemeKind, Submission, SubmissionStatus, TaskSpec,
    Usd,
};
use crate::rng::rng_from_seed;

pub use backend::{AnnotationBackend, Completion, JudgeFn, LocalQueueBackend, SimulatedPool};
pub use clock::{Clock, SystemClock, VirtualClock};
pub use qualify::{qualify, Eligibility, IneligibleReason, QualificationRule};
pub use schedule::{schedule_release, ScheduleConfig};

pub const DEFAULT_LEASE_TIMEOUT_SECS: i64 = 30 * 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DispatchConfig {
    pub batch_size: usize,
    pub lease_timeout_secs: i64,
    pub schedule: ScheduleConfig,
    pub qualification: QualificationRule,
    /// Recorded on each batch; defaults to the task's per-instance cost
    /// split across its aspects. Nothing is paid out.
    #[serde(default)]
    pub payment_per_assignment: Option<Usd>,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self {
            batch_size: crate::planner::DEFAULT_BATCH_SIZE,
            lease_timeout_secs: DEFAULT_LEASE_TIMEOUT_SECS,
            schedule: ScheduleConfig::default(),
            qualification: QualificationRule::default(),
            payment_per_assignment: None,
        }
    }
}

/// One assignment inside a batch. `presentation_key` never leaves the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub assignment_id: String,
    pub instance_id: String,
    pub aspect: String,
    pub replica: usize,
    pub prompt: String,
    /// One text for unpaired tasks, panels A and B for paired tasks.
    pub panels: Vec<String>,
    pub presentation_key: PresentationKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStatus {
    Pending,
    Released,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBatch {
    pub batch_id: String,
    pub submission_id: String,
    pub task_id: String,
    pub scheme: SchemeKind,
    pub category_labels: Vec<String>,
    pub instructions: String,
    pub paired: bool,
    pub items: Vec<BatchItem>,
    pub release_at: DateTime<Utc>,
    pub status: BatchStatus,
    pub payment_per_assignment: Usd,
}

/// Annotator-facing view of an item, with no gold provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedItem {
    pub assignment_id: String,
    pub instance_id: String,
    pub aspect: String,
    pub replica: usize,
    pub prompt: String,
    pub panels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedBatch {
    pub batch_id: String,
    pub task_id: String,
    pub scheme: SchemeKind,
    pub category_labels: Vec<String>,
    pub instructions: String,
    pub items: Vec<PublishedItem>,
}

impl AnnotationBatch {
    pub fn published(&self) -> PublishedBatch {
        self.published_where(|_| true)
    }

    /// Published view restricted to items matching `keep`.
    pub fn published_where(&self, keep: impl Fn(&BatchItem) -> bool) -> PublishedBatch {
        PublishedBatch {
            batch_id: self.batch_id.clone(),
            task_id: self.task_id.clone(),
            scheme: self.scheme,
            category_labels: self.category_labels.clone(),
            instructions: self.instructions.clone(),
            items: self
                .items
                .iter()
                .filter(|it| keep(it))
                .map(|it| PublishedItem {
                    assignment_id: it.assignment_id.clone(),
                    instance_id: it.instance_id.clone(),
                    aspect: it.aspect.clone(),
                    replica: it.replica,
                    prompt: it.prompt.clone(),
                    panels: it.panels.clone(),
                })
                .collect(),
        }
    }
}

/// A label as sent by an annotator: one rating, or one per panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelSubmission {
    Paired { label_a: u8, label_b: u8 },
    Single { label: u8 },
}

/// Work handed to an annotator under a lease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub assignment_id: String,
    pub batch_id: String,
    pub task_id: String,
    pub instance_id: String,
    pub aspect: String,
    pub scheme: SchemeKind,
    pub category_labels: Vec<String>,
    pub instructions: String,
    pub prompt: String,
    pub panels: Vec<String>,
    pub lease_expires_at: DateTime<Utc>,
}

/// Substitutes `{field}` placeholders: instance inputs, `{candidate}`,
/// `{reference}`, `{output_a}`, `{output_b}` and `{aspect_question}`.
pub fn render_prompt(
    template: &str,
    instance: &Instance,
    aspect_question: &str,
    candidate: Option<&str>,
    panels: &[String],
) -> String {
    let mut out = template.to_string();
    for (k, v) in &instance.input_fields {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    if let Some(c) = candidate {
        out = out.replace("{candidate}", c);
        out = out.replace(
            "{reference}",
            instance.references.first().map(String::as_str).unwrap_or(""),
        );
    }
    if let [a, b] = panels {
        out = out.replace("{output_a}", a).replace("{output_b}", b);
    }
    out.replace("{aspect_question}", aspect_question)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub labels_per_instance: usize,
    pub batch_size: usize,
    /// Seeds the panel order of paired items.
    pub permutation_seed: u64,
}

/// Expands a sampled submission into batches. Every (instance, aspect)
/// pair gets exactly `labels_per_instance` assignments; items are ordered
/// replica-major so replicas of one pair land in different batches when
/// possible. Paired tasks draw the gold side per item.
pub fn build_batches(
    submission: &Submission,
    subset_ids: &[String],
    task: &TaskSpec,
    instances: &BTreeMap<String, Instance>,
    plan: BatchPlan,
    release_at: DateTime<Utc>,
    payment_per_assignment: Usd,
) -> Result<Vec<AnnotationBatch>> {
    if submission.status != SubmissionStatus::Sampled {
        return Err(Error::Inconsistent(format!(
            "submission {} is {}, expected sampled",
            submission.submission_id, submission.status
        )));
    }
    if plan.labels_per_instance == 0 || plan.batch_size == 0 {
        return Err(Error::domain("labels per instance and batch size must be positive"));
    }
    let mut rng = rng_from_seed(plan.permutation_seed);
    let mut items = Vec::with_capacity(subset_ids.len() * task.aspects.len() * plan.labels_per_instance);
    for replica in 0..plan.labels_per_instance {
        for id in subset_ids {
            let instance = instances
                .get(id)
                .ok_or_else(|| Error::Inconsistent(format!("unknown instance id {id}")))?;
            let prediction = submission
                .predictions
                .get(id)
                .ok_or_else(|| Error::Inconsistent(format!("no prediction for {id}")))?;
            for aspect in &task.aspects {
                let (key, panels) = if task.paired_with_gold {
                    let gold = instance
                        .references
                        .first()
                        .ok_or_else(|| Error::Inconsistent(format!("instance {id} has no gold output")))?;
                    let gold_first = if task.blind_permutation {
                        rng.random_bool(0.5)
                    } else {
                        false
                    };
                    if gold_first {
                        (PresentationKey::AGold, vec![gold.clone(), prediction.clone()])
                    } else {
                        (PresentationKey::BGold, vec![prediction.clone(), gold.clone()])
                    }
                } else {
                    (PresentationKey::Unpaired, vec![prediction.clone()])
                };
                let candidate = (!task.paired_with_gold).then_some(prediction.as_str());
                let panel_texts: &[String] = if task.paired_with_gold { &panels } else { &[] };
                let prompt = render_prompt(
                    &task.prompt_template,
                    instance,
                    &aspect.question,
                    candidate,
                    panel_texts,
                );
                items.push(BatchItem {
                    assignment_id: String::new(),
                    instance_id: id.clone(),
                    aspect: aspect.name.clone(),
                    replica,
                    prompt,
                    panels,
                    presentation_key: key,
                });
            }
        }
    }

    let batches = items
        .chunks(plan.batch_size)
        .enumerate()
        .map(|(b, chunk)| {
            let batch_id = format!("{}-b{:04}", submission.submission_id, b);
            let items = chunk
                .iter()
                .enumerate()
                .map(|(j, it)| BatchItem {
                    assignment_id: format!("{batch_id}-{j:03}"),
                    ..it.clone()
                })
                .collect();
            AnnotationBatch {
                batch_id,
                submission_id: submission.submission_id.clone(),
                task_id: task.task_id.clone(),
                scheme: task.elicitation.kind,
                category_labels: task.elicitation.category_labels.clone(),
                instructions: task.instructions.clone(),
                paired: task.paired_with_gold,
                items,
                release_at,
                status: BatchStatus::Pending,
                payment_per_assignment,
            }
        })
        .collect();
    Ok(batches)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum AssignmentStatus {
    Open,
    Leased {
        annotator_id: String,
        expires_at: DateTime<Utc>,
    },
    Complete {
        annotator_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentState {
    pub batch_id: String,
    pub index: usize,
    pub status: AssignmentStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DispatchEvent {
    AnnotatorRegistered {
        profile: AnnotatorProfile,
    },
    BatchesCreated {
        batches: Vec<AnnotationBatch>,
    },
    BatchReleased {
        batch_id: String,
        at: DateTime<Utc>,
    },
    LeaseGranted {
        assignment_id: String,
        annotator_id: String,
        expires_at: DateTime<Utc>,
    },
    LeaseExpired {
        assignment_id: String,
    },
    LabelRecorded {
        assignment_id: String,
        record: AnnotationRecord,
    },
}

fn pair_key(submission: &str, instance: &str, aspect: &str) -> String {
    format!("{submission}\u{1f}{instance}\u{1f}{aspect}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatcher {
    config: DispatchConfig,
    profiles: BTreeMap<String, AnnotatorProfile>,
    batches: BTreeMap<String, AnnotationBatch>,
    assignments: BTreeMap<String, AssignmentState>,
    records: BTreeMap<String, AnnotationRecord>,
    /// Annotators that have held each (submission, instance, aspect).
    seen_by: BTreeMap<String, BTreeSet<String>>,
}

impl Dispatcher {
    pub fn new(config: DispatchConfig) -> Self {
        Self {
            config,
            profiles: BTreeMap::new(),
            batches: BTreeMap::new(),
            assignments: BTreeMap::new(),
            records: BTreeMap::new(),
            seen_by: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &DispatchConfig {
        &self.config
    }

    /// Replaces the configuration, e.g. after restoring from a snapshot.
    pub fn set_config(&mut self, config: DispatchConfig) {
        self.config = config;
    }

    pub fn profile(&self, annotator_id: &str) -> Option<&AnnotatorProfile> {
        self.profiles.get(annotator_id)
    }

    pub fn batch(&self, batch_id: &str) -> Option<&AnnotationBatch> {
        self.batches.get(batch_id)
    }

    pub fn batches_for<'a>(&'a self, submission_id: &'a str) -> impl Iterator<Item = &'a AnnotationBatch> + 'a {
        self.batches.values().filter(move |b| b.submission_id == submission_id)
    }

    pub fn has_batches(&self, submission_id: &str) -> bool {
        self.batches_for(submission_id).next().is_some()
    }

    pub fn assignment(&self, assignment_id: &str) -> Option<&AssignmentState> {
        self.assignments.get(assignment_id)
    }

    /// Records of a submission in assignment-id order.
    pub fn records_for(&self, submission_id: &str) -> Vec<AnnotationRecord> {
        self.records
            .values()
            .filter(|r| r.submission_id == submission_id)
            .cloned()
            .collect()
    }

    pub fn all_records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.records.values()
    }

    /// `(completed, total)` assignments of a submission.
    pub fn progress(&self, submission_id: &str) -> (usize, usize) {
        self.batches_for(submission_id).fold((0, 0), |(done, total), b| {
            let d = b
                .items
                .iter()
                .filter(|it| self.records.contains_key(&it.assignment_id))
                .count();
            (done + d, total + b.items.len())
        })
    }

    fn item(&self, state: &AssignmentState) -> &BatchItem {
        &self.batches[&state.batch_id].items[state.index]
    }

    fn eligible_for(&self, annotator_id: &str, task_id: &str) -> Result<bool> {
        let profile = self
            .profiles
            .get(annotator_id)
            .ok_or_else(|| Error::Unauthorized(format!("unknown annotator {annotator_id}")))?;
        Ok(qualify(profile, &self.config.qualification, task_id).is_eligible())
    }

    fn to_assignment(&self, assignment_id: &str, expires_at: DateTime<Utc>) -> Assignment {
        let state = &self.assignments[assignment_id];
        let batch = &self.batches[&state.batch_id];
        let item = &batch.items[state.index];
        Assignment {
            assignment_id: assignment_id.to_string(),
            batch_id: batch.batch_id.clone(),
            task_id: batch.task_id.clone(),
            instance_id: item.instance_id.clone(),
            aspect: item.aspect.clone(),
            scheme: batch.scheme,
            category_labels: batch.category_labels.clone(),
            instructions: batch.instructions.clone(),
            prompt: item.prompt.clone(),
            panels: item.panels.clone(),
            lease_expires_at: expires_at,
        }
    }

    pub fn decide_register(&self, profile: AnnotatorProfile) -> Result<Vec<DispatchEvent>> {
        profile.validate()?;
        Ok(vec![DispatchEvent::AnnotatorRegistered { profile }])
    }

    pub fn decide_create(&self, batches: Vec<AnnotationBatch>) -> Result<Vec<DispatchEvent>> {
        for b in &batches {
            if self.batches.contains_key(&b.batch_id) {
                return Err(Error::Inconsistent(format!("batch {} already exists", b.batch_id)));
            }
        }
        Ok(vec![DispatchEvent::BatchesCreated { batches }])
    }

    /// Releases every pending batch whose release time has come.
    pub fn decide_release(&self, now: DateTime<Utc>) -> Vec<DispatchEvent> {
        self.batches
            .values()
            .filter(|b| b.status == BatchStatus::Pending && b.release_at <= now)
            .map(|b| DispatchEvent::BatchReleased {
                batch_id: b.batch_id.clone(),
                at: now,
            })
            .collect()
    }

    /// Expires every lease past its deadline.
    pub fn decide_expire(&self, now: DateTime<Utc>) -> Vec<DispatchEvent> {
        self.assignments
            .iter()
            .filter(|(_, s)| matches!(&s.status, AssignmentStatus::Leased { expires_at, .. } if *expires_at <= now))
            .map(|(id, _)| DispatchEvent::LeaseExpired {
                assignment_id: id.clone(),
            })
            .collect()
    }

    /// Picks the next item for an annotator from released batches. An
    /// annotator with a live lease gets that lease back. Expired leases are
    /// reclaimed on the way.
    pub fn decide_assign_next(
        &self,
        annotator_id: &str,
        now: DateTime<Utc>,
    ) -> Result<(Vec<DispatchEvent>, Option<Assignment>)> {
        let profile = self
            .profiles
            .get(annotator_id)
            .ok_or_else(|| Error::Unauthorized(format!("unknown annotator {annotator_id}")))?;

        for (id, s) in &self.assignments {
            if let AssignmentStatus::Leased {
                annotator_id: a,
                expires_at,
            } = &s.status
            {
                if a == annotator_id && *expires_at > now {
                    return Ok((vec![], Some(self.to_assignment(id, *expires_at))));
                }
            }
        }

        let mut blocked: Option<Eligibility> = None;
        let mut qualified_somewhere = false;
        for batch in self.batches.values().filter(|b| b.status == BatchStatus::Released) {
            let eligibility = qualify(profile, &self.config.qualification, &batch.task_id);
            if !eligibility.is_eligible() {
                blocked.get_or_insert(eligibility);
                continue;
            }
            qualified_somewhere = true;
            for item in &batch.items {
                let state = &self.assignments[&item.assignment_id];
                let reclaim = match &state.status {
                    AssignmentStatus::Open => false,
                    AssignmentStatus::Leased { expires_at, .. } if *expires_at <= now => true,
                    _ => continue,
                };
                let seen = self
                    .seen_by
                    .get(&pair_key(&batch.submission_id, &item.instance_id, &item.aspect))
                    .is_some_and(|s| s.contains(annotator_id));
                if seen {
                    continue;
                }
                let expires_at = now + Duration::seconds(self.config.lease_timeout_secs);
                let mut events = Vec::new();
                if reclaim {
                    events.push(DispatchEvent::LeaseExpired {
                        assignment_id: item.assignment_id.clone(),
                    });
                }
                events.push(DispatchEvent::LeaseGranted {
                    assignment_id: item.assignment_id.clone(),
                    annotator_id: annotator_id.to_string(),
                    expires_at,
                });
                return Ok((events, Some(self.to_assignment(&item.assignment_id, expires_at))));
            }
        }
        match blocked {
            Some(Eligibility::Ineligible(reasons)) if !qualified_somewhere => {
                let names: Vec<&str> = reasons.iter().map(|r| r.as_str()).collect();
                Err(Error::Unauthorized(format!(
                    "annotator {annotator_id} is not qualified: {}",
                    names.join(", ")
                )))
            }
            _ => Ok((vec![], None)),
        }
    }

    fn build_record(
        &self,
        state: &AssignmentState,
        annotator_id: &str,
        label: LabelSubmission,
        now: DateTime<Utc>,
        elapsed: Option<f64>,
    ) -> Result<AnnotationRecord> {
        let batch = &self.batches[&state.batch_id];
        let item = self.item(state);
        let (raw, reference) = match (batch.paired, label) {
            (false, LabelSubmission::Single { label }) => (label, None),
            (true, LabelSubmission::Paired { label_a, label_b }) => match item.presentation_key {
                PresentationKey::AGold => (label_b, Some(label_a)),
                _ => (label_a, Some(label_b)),
            },
            (true, _) => return Err(Error::domain("paired items need label_a and label_b")),
            (false, _) => return Err(Error::domain("unpaired items take a single label")),
        };
        let record = AnnotationRecord {
            submission_id: batch.submission_id.clone(),
            instance_id: item.instance_id.clone(),
            aspect: item.aspect.clone(),
            annotator_id: annotator_id.to_string(),
            raw_label: raw,
            scheme: batch.scheme,
            day_tag: self.config.schedule.local_date(now)?,
            presentation_key: item.presentation_key,
            reference_label: reference,
            elapsed,
        };
        record.validate(batch.paired)?;
        Ok(record)
    }

    /// Records a label for a lease the annotator holds. Retrying a completed
    /// assignment returns the stored record and emits nothing.
    pub fn decide_record_label(
        &self,
        assignment_id: &str,
        annotator_id: &str,
        label: LabelSubmission,
        now: DateTime<Utc>,
        elapsed: Option<f64>,
    ) -> Result<(Vec<DispatchEvent>, AnnotationRecord)> {
        let state = self
            .assignments
            .get(assignment_id)
            .ok_or_else(|| Error::not_found("assignment", assignment_id))?;
        match &state.status {
            AssignmentStatus::Complete { annotator_id: a } if a == annotator_id => {
                Ok((vec![], self.records[assignment_id].clone()))
            }
            AssignmentStatus::Leased {
                annotator_id: a,
                expires_at,
            } if a == annotator_id && *expires_at > now => {
                let record = self.build_record(state, annotator_id, label, now, elapsed)?;
                Ok((
                    vec![DispatchEvent::LabelRecorded {
                        assignment_id: assignment_id.to_string(),
                        record: record.clone(),
                    }],
                    record,
                ))
            }
            _ => Err(Error::StaleLease(format!(
                "{annotator_id} holds no live lease on {assignment_id}"
            ))),
        }
    }

    /// Accepts work completed through a backend, without a lease.
    pub fn decide_completion(&self, completion: &Completion, now: DateTime<Utc>) -> Result<Vec<DispatchEvent>> {
        let state = self
            .assignments
            .get(&completion.assignment_id)
            .ok_or_else(|| Error::not_found("assignment", &completion.assignment_id))?;
        let batch = &self.batches[&state.batch_id];
        if batch.status == BatchStatus::Pending {
            return Err(Error::Inconsistent(format!("batch {} is not released", batch.batch_id)));
        }
        match &state.status {
            AssignmentStatus::Complete { annotator_id } if *annotator_id == completion.annotator_id => {
                return Ok(vec![]);
            }
            AssignmentStatus::Complete { .. } => {
                return Err(Error::StaleLease(format!(
                    "{} is already complete",
                    completion.assignment_id
                )));
            }
            AssignmentStatus::Leased {
                annotator_id,
                expires_at,
            } if *annotator_id != completion.annotator_id && *expires_at > now => {
                return Err(Error::StaleLease(format!(
                    "{} is leased to another annotator",
                    completion.assignment_id
                )));
            }
            _ => {}
        }
        if !self.eligible_for(&completion.annotator_id, &batch.task_id)? {
            return Err(Error::Unauthorized(format!(
                "annotator {} is not qualified for {}",
                completion.annotator_id, batch.task_id
            )));
        }
        let item = self.item(state);
        let holds_lease = matches!(&state.status, AssignmentStatus::Leased { annotator_id, .. } if *annotator_id == completion.annotator_id);
        let seen = self
            .seen_by
            .get(&pair_key(&batch.submission_id, &item.instance_id, &item.aspect))
            .is_some_and(|s| s.contains(&completion.annotator_id));
        if seen && !holds_lease {
            return Err(Error::Inconsistent(format!(
                "annotator {} already labeled ({}, {})",
                completion.annotator_id, item.instance_id, item.aspect
            )));
        }
        let record = self.build_record(
            state,
            &completion.annotator_id,
            completion.label,
            now,
            completion.elapsed,
        )?;
        Ok(vec![DispatchEvent::LabelRecorded {
            assignment_id: completion.assignment_id.clone(),
            record,
        }])
    }

    pub fn apply(&mut self, event: &DispatchEvent) {
        match event {
            DispatchEvent::AnnotatorRegistered { profile } => {
                self.profiles.insert(profile.annotator_id.clone(), profile.clone());
            }
            DispatchEvent::BatchesCreated { batches } => {
                for b in batches {
                    for (index, item) in b.items.iter().enumerate() {
                        self.assignments.insert(
                            item.assignment_id.clone(),
                            AssignmentState {
                                batch_id: b.batch_id.clone(),
                                index,
                                status: AssignmentStatus::Open,
                            },
                        );
                    }
                    self.batches.insert(b.batch_id.clone(), b.clone());
                }
            }
            DispatchEvent::BatchReleased { batch_id, .. } => {
                if let Some(b) = self.batches.get_mut(batch_id) {
                    if b.status == BatchStatus::Pending {
                        b.status = BatchStatus::Released;
                    }
                }
            }
            DispatchEvent::LeaseGranted {
                assignment_id,
                annotator_id,
                expires_at,
            } => {
                if let Some(s) = self.assignments.get_mut(assignment_id) {
                    s.status = AssignmentStatus::Leased {
                        annotator_id: annotator_id.clone(),
                        expires_at: *expires_at,
                    };
                    let item = &self.batches[&s.batch_id].items[s.index];
                    let key = pair_key(
                        &self.batches[&s.batch_id].submission_id,
                        &item.instance_id,
                        &item.aspect,
                    );
                    self.seen_by.entry(key).or_default().insert(annotator_id.clone());
                }
            }
            DispatchEvent::LeaseExpired { assignment_id } => {
                if let Some(s) = self.assignments.get_mut(assignment_id) {
                    if matches!(s.status, AssignmentStatus::Leased { .. }) {
                        s.status = AssignmentStatus::Open;
                    }
                }
            }
            DispatchEvent::LabelRecorded { assignment_id, record } => {
                let Some(s) = self.assignments.get_mut(assignment_id) else {
                    return;
                };
                s.status = AssignmentStatus::Complete {
                    annotator_id: record.annotator_id.clone(),
                };
                let batch_id = s.batch_id.clone();
                self.seen_by
                    .entry(pair_key(&record.submission_id, &record.instance_id, &record.aspect))
                    .or_default()
                    .insert(record.annotator_id.clone());
                self.records.insert(assignment_id.clone(), record.clone());
                let batch = self.batches.get_mut(&batch_id).expect("assignment batch exists");
                if batch
                    .items
                    .iter()
                    .all(|it| self.records.contains_key(&it.assignment_id))
                {
                    batch.status = BatchStatus::Complete;
                }
            }
        }
    }

    fn apply_all(&mut self, events: &[DispatchEvent]) {
        for e in events {
            self.apply(e);
        }
    }

    pub fn register(&mut self, profile: AnnotatorProfile) -> Result<()> {
        let ev = self.decide_register(profile)?;
        self.apply_all(&ev);
        Ok(())
    }

    pub fn create(&mut self, batches: Vec<AnnotationBatch>) -> Result<()> {
        let ev = self.decide_create(batches)?;
        self.apply_all(&ev);
        Ok(())
    }

    pub fn release_due(&mut self, now: DateTime<Utc>) -> Vec<String> {
        let ev = self.decide_release(now);
        self.apply_all(&ev);
        ev.iter()
            .filter_map(|e| match e {
                DispatchEvent::BatchReleased { batch_id, .. } => Some(batch_id.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn expire_leases(&mut self, now: DateTime<Utc>) -> usize {
        let ev = self.decide_expire(now);
        self.apply_all(&ev);
        ev.len()
    }

    pub fn assign_next(&mut self, annotator_id: &str, now: DateTime<Utc>) -> Result<Option<Assignment>> {
        let (ev, a) = self.decide_assign_next(annotator_id, now)?;
        self.apply_all(&ev);
        Ok(a)
    }

    pub fn record_label(
        &mut self,
        assignment_id: &str,
        annotator_id: &str,
        label: LabelSubmission,
        now: DateTime<Utc>,
    ) -> Result<AnnotationRecord> {
        let (ev, r) = self.decide_record_label(assignment_id, annotator_id, label, now, None)?;
        self.apply_all(&ev);
        Ok(r)
    }

    pub fn complete(&mut self, completion: &Completion, now: DateTime<Utc>) -> Result<()> {
        let ev = self.decide_completion(completion, now)?;
        self.apply_all(&ev);
        Ok(())
    }
}

#[cfg(test)]
mod tests;
