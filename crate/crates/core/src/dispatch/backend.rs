use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{LabelSubmission, PublishedBatch};
use crate::error::{Error, Result};
use crate::model::{AnnotatorProfile, SchemeKind};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sim::SimulatedAnnotator;

/// A label produced outside the lease flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub assignment_id: String,
    pub annotator_id: String,
    pub label: LabelSubmission,
    #[serde(default)]
    pub elapsed: Option<f64>,
}

/// Where released batches go. Backends only ever see published batches.
pub trait AnnotationBackend: Send {
    fn release(&mut self, batch: &PublishedBatch) -> Result<()>;
    fn poll(&mut self, now: DateTime<Utc>) -> Result<Vec<Completion>>;
    /// Withdraws an assignment whose lease ran out.
    fn expire(&mut self, assignment_id: &str) -> Result<()>;
}

/// Backend for the built-in queue: annotators pull work over HTTP, so
/// releasing and polling have nothing to do.
#[derive(Debug, Default, Clone, Copy)]
pub struct LocalQueueBackend;

impl AnnotationBackend for LocalQueueBackend {
    fn release(&mut self, _batch: &PublishedBatch) -> Result<()> {
        Ok(())
    }

    fn poll(&mut self, _now: DateTime<Utc>) -> Result<Vec<Completion>> {
        Ok(Vec::new())
    }

    fn expire(&mut self, _assignment_id: &str) -> Result<()> {
        Ok(())
    }
}

/// Latent quality in [0, 1] of a text shown for `(instance_id, aspect)`.
pub type JudgeFn = Arc<dyn Fn(&str, &str, &str) -> f64 + Send + Sync>;

/// Simulated crowd that labels everything it is given on the next poll.
/// The annotator and label of an item depend only on the pool seed and the
/// item itself, so re-releasing work after a restart yields the same labels.
/// Replica `r` of an (instance, aspect) pair goes to the annotator `r` places
/// after a seeded offset, which keeps replicas on distinct annotators.
pub struct SimulatedPool {
    annotators: Vec<SimulatedAnnotator>,
    judge: JudgeFn,
    seed: u64,
    pending: Vec<Completion>,
}

impl fmt::Debug for SimulatedPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimulatedPool")
            .field("annotators", &self.annotators.len())
            .field("seed", &self.seed)
            .field("pending", &self.pending.len())
            .finish()
    }
}

impl SimulatedPool {
    pub fn new(annotators: Vec<SimulatedAnnotator>, judge: JudgeFn, seed: u64) -> Result<Self> {
        if annotators.is_empty() {
            return Err(Error::Config("simulated pool needs at least one annotator".into()));
        }
        for a in &annotators {
            a.model.validate()?;
        }
        Ok(Self {
            annotators,
            judge,
            seed,
            pending: Vec::new(),
        })
    }

    /// Profiles that pass the default qualification rule for `task_ids`.
    pub fn profiles<'a>(&self, task_ids: impl IntoIterator<Item = &'a str> + Clone) -> Vec<AnnotatorProfile> {
        self.annotators
            .iter()
            .map(|a| AnnotatorProfile {
                annotator_id: a.annotator_id.clone(),
                locale: "US".into(),
                hits_completed: 10_000,
                approval_rate: 1.0,
                passed_qual_tests: task_ids.clone().into_iter().map(String::from).collect(),
            })
            .collect()
    }

    fn pick(&self, instance_id: &str, aspect: &str, replica: usize) -> Result<usize> {
        let n = self.annotators.len();
        if replica >= n {
            return Err(Error::Config(format!(
                "{n} simulated annotators cannot supply replica {replica} of ({instance_id}, {aspect})"
            )));
        }
        let offset = derive_seed(self.seed, &format!("{instance_id}\u{1f}{aspect}"), 0) % n as u64;
        Ok((offset as usize + replica) % n)
    }
}

impl AnnotationBackend for SimulatedPool {
    fn release(&mut self, batch: &PublishedBatch) -> Result<()> {
        let scheme: SchemeKind = batch.scheme;
        for item in &batch.items {
            let who = self.pick(&item.instance_id, &item.aspect, item.replica)?;
            let annotator = &self.annotators[who];
            let mut rng = rng_from_seed(derive_seed(self.seed, &item.assignment_id, 0));
            let mut rate = |text: &str| {
                let q = (self.judge)(&item.instance_id, &item.aspect, text);
                annotator.model.label(q, scheme, &mut rng)
            };
            let label = match item.panels.as_slice() {
                [single] => LabelSubmission::Single { label: rate(single) },
                [a, b] => {
                    let label_a = rate(a);
                    let label_b = rate(b);
                    LabelSubmission::Paired { label_a, label_b }
                }
                _ => {
                    return Err(Error::Inconsistent(format!(
                        "item {} has no panels",
                        item.assignment_id
                    )))
                }
            };
            self.pending.push(Completion {
                assignment_id: item.assignment_id.clone(),
                annotator_id: annotator.annotator_id.clone(),
                label,
                elapsed: None,
            });
        }
        Ok(())
    }

    fn poll(&mut self, _now: DateTime<Utc>) -> Result<Vec<Completion>> {
        Ok(std::mem::take(&mut self.pending))
    }

    fn expire(&mut self, assignment_id: &str) -> Result<()> {
        self.pending.retain(|c| c.assignment_id != assignment_id);
        Ok(())
    }
}
