//! Shared data model: tasks, instances, submissions, annotations and
//! annotator profiles, plus intake validation of prediction files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// US dollars stored as whole micro-dollars so budget arithmetic is exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Usd(u64);

impl Usd {
    pub const ZERO: Usd = Usd(0);

    pub fn from_micros(micros: u64) -> Self {
        Usd(micros)
    }

    /// Rounds to the nearest micro-dollar. Negative or non-finite amounts are rejected.
    pub fn from_dollars(dollars: f64) -> Result<Self> {
        if !dollars.is_finite() || dollars < 0.0 {
            return Err(Error::domain(format!("invalid amount ${dollars}")));
        }
        Ok(Usd((dollars * 1e6).round() as u64))
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn checked_mul(self, factor: u64) -> Option<Usd> {
        self.0.checked_mul(factor).map(Usd)
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${:.2}", self.dollars())
    }
}

impl Serialize for Usd {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.dollars())
    }
}

impl<'de> Deserialize<'de> for Usd {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Usd::from_dollars(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Likert5,
    Binary,
}

impl SchemeKind {
    pub fn num_categories(self) -> usize {
        match self {
            SchemeKind::Likert5 => 5,
            SchemeKind::Binary => 2,
        }
    }

    pub fn default_labels(self) -> Vec<String> {
        let labels: &[&str] = match self {
            SchemeKind::Likert5 => &["strongly-disagree", "disagree", "neutral", "agree", "strongly-agree"],
            SchemeKind::Binary => &["no", "yes"],
        };
        labels.iter().map(|s| s.to_string()).collect()
    }

    pub fn is_valid_label(self, label: u8) -> bool {
        usize::from(label) < self.num_categories()
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Likert5 => "likert5",
            SchemeKind::Binary => "binary",
        })
    }
}

/// Response format shown to annotators, with ordered category labels
/// (most negative first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElicitationScheme {
    pub kind: SchemeKind,
    pub category_labels: Vec<String>,
}

impl ElicitationScheme {
    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            category_labels: kind.default_labels(),
        }
    }

    pub fn likert5() -> Self {
        Self::new(SchemeKind::Likert5)
    }

    pub fn binary() -> Self {
        Self::new(SchemeKind::Binary)
    }

    pub fn validate(&self) -> Result<()> {
        if self.category_labels.len() != self.kind.num_categories() {
            return Err(Error::Config(format!(
                "{} scheme needs {} categories, got {}",
                self.kind,
                self.kind.num_categories(),
                self.category_labels.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectSpec {
    pub name: String,
    /// The statement annotators agree or disagree with.
    #[serde(default)]
    pub question: String,
}

/// Per-task evaluation recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub name: String,
    pub elicitation: ElicitationScheme,
    pub aspects: Vec<AspectSpec>,
    pub eval_sample_size: usize,
    pub per_instance_cost: Usd,
    /// Model output is shown side by side with the gold output.
    #[serde(default)]
    pub paired_with_gold: bool,
    /// Panel order of paired outputs is randomized per item.
    #[serde(default)]
    pub blind_permutation: bool,
    #[serde(default)]
    pub instructions: String,
    #[serde(default)]
    pub prompt_template: String,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("task {}: {msg}", self.task_id)));
        if self.task_id.trim().is_empty() {
            return Err(Error::Config("task_id must not be empty".into()));
        }
        self.elicitation.validate()?;
        if self.eval_sample_size == 0 {
            return fail("eval_sample_size must be at least 1".into());
        }
        if self.aspects.is_empty() {
            return fail("at least one aspect is required".into());
        }
        let mut seen = BTreeSet::new();
        for a in &self.aspects {
            if !seen.insert(a.name.as_str()) {
                return fail(format!("duplicate aspect {:?}", a.name));
            }
        }
        if self.blind_permutation && !self.paired_with_gold {
            return fail("blind_permutation requires paired_with_gold".into());
        }
        if self.paired_with_gold
            && ["{candidate}", "{reference}"]
                .iter()
                .any(|p| self.prompt_template.contains(p))
        {
            return fail("paired prompts must use {output_a}/{output_b} only".into());
        }
        Ok(())
    }

    pub fn aspect_names(&self) -> impl Iterator<Item = &str> {
        self.aspects.iter().map(|a| a.name.as_str())
    }

    pub fn has_aspect(&self, name: &str) -> bool {
        self.aspects.iter().any(|a| a.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    /// Named inputs such as `question`, `source`, `observations` or `article`.
    #[serde(default)]
    pub input_fields: BTreeMap<String, String>,
    #[serde(default)]
    pub references: Vec<String>,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmissionStatus {
    Received,
    Validated,
    Sampled,
    Annotating,
    Scored,
    Rejected,
}

impl SubmissionStatus {
    /// Forward moves along received → validated → sampled → annotating →
    /// scored; `rejected` only from received or validated.
    pub fn can_transition_to(self, next: SubmissionStatus) -> bool {
        use SubmissionStatus::*;
        match next {
            Rejected => matches!(self, Received | Validated),
            _ => self != Rejected && next > self,
        }
    }

    /// Whether the submission has at least reached `sampled`.
    pub fn is_sampled_or_later(self) -> bool {
        matches!(
            self,
            SubmissionStatus::Sampled | SubmissionStatus::Annotating | SubmissionStatus::Scored
        )
    }
}

impl fmt::Display for SubmissionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SubmissionStatus::Received => "received",
            SubmissionStatus::Validated => "validated",
            SubmissionStatus::Sampled => "sampled",
            SubmissionStatus::Annotating => "annotating",
            SubmissionStatus::Scored => "scored",
            SubmissionStatus::Rejected => "rejected",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub submission_id: String,
    pub task_id: String,
    pub submitter: String,
    pub created_at: DateTime<Utc>,
    pub predictions: BTreeMap<String, String>,
    pub status: SubmissionStatus,
}

impl Submission {
    pub fn advance(&mut self, next: SubmissionStatus) -> Result<()> {
        if !self.status.can_transition_to(next) {
            return Err(Error::Inconsistent(format!(
                "submission {}: illegal transition {} -> {}",
                self.submission_id, self.status, next
            )));
        }
        self.status = next;
        Ok(())
    }
}

/// Which panel holds the gold output, for paired presentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PresentationKey {
    #[serde(rename = "A-gold")]
    AGold,
    #[serde(rename = "B-gold")]
    BGold,
    #[serde(rename = "unpaired")]
    Unpaired,
}

/// One elicited label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub submission_id: String,
    pub instance_id: String,
    pub aspect: String,
    pub annotator_id: String,
    /// Category index into the scheme, most negative first. For paired
    /// presentation this is the rating of the model output.
    pub raw_label: u8,
    pub scheme: SchemeKind,
    pub day_tag: NaiveDate,
    pub presentation_key: PresentationKey,
    /// Rating given to the gold panel, paired presentation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed: Option<f64>,
}

impl AnnotationRecord {
    pub fn validate(&self, paired_task: bool) -> Result<()> {
        if !self.scheme.is_valid_label(self.raw_label) {
            return Err(Error::domain(format!(
                "label {} invalid for {} scheme",
                self.raw_label, self.scheme
            )));
        }
        if let Some(r) = self.reference_label {
            if !self.scheme.is_valid_label(r) {
                return Err(Error::domain(format!(
                    "reference label {r} invalid for {} scheme",
                    self.scheme
                )));
            }
        }
        let keyed = self.presentation_key != PresentationKey::Unpaired;
        if keyed && !paired_task {
            return Err(Error::Inconsistent(
                "paired presentation key on an unpaired task".into(),
            ));
        }
        if !keyed && paired_task {
            return Err(Error::Inconsistent(
                "paired task record without a presentation key".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    /// ISO country code.
    pub locale: String,
    pub hits_completed: u64,
    pub approval_rate: f64,
    #[serde(default)]
    pub passed_qual_tests: BTreeSet<String>,
}

impl AnnotatorProfile {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.approval_rate) {
            return Err(Error::domain(format!(
                "annotator {}: approval rate {} outside [0, 1]",
                self.annotator_id, self.approval_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "rule", content = "id", rename_all = "snake_case")]
pub enum Violation {
    Missing(String),
    Unknown(String),
    EmptyPrediction(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Missing(id) => write!(f, "missing: {id}"),
            Violation::Unknown(id) => write!(f, "unknown id: {id}"),
            Violation::EmptyPrediction(id) => write!(f, "empty prediction: {id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a prediction map against the task's test ids: every id covered,
/// no unknown ids, no empty or whitespace-only predictions. Violations are
/// sorted so the report is stable.
pub fn validate_submission(
    predictions: &BTreeMap<String, String>,
    task: &TaskSpec,
    test_ids: &BTreeSet<String>,
) -> Result<ValidationReport> {
    if test_ids.is_empty() {
        return Err(Error::domain(format!("task {} has no test ids", task.task_id)));
    }
    let mut violations = Vec::new();
    for id in test_ids {
        if !predictions.contains_key(id) {
            violations.push(Violation::Missing(id.clone()));
        }
    }
    for (id, text) in predictions {
        if !test_ids.contains(id) {
            violations.push(Violation::Unknown(id.clone()));
        } else if text.trim().is_empty() {
            violations.push(Violation::EmptyPrediction(id.clone()));
        }
    }
    violations.sort();
    Ok(ValidationReport { violations })
}

#[derive(Debug, Deserialize)]
struct PredictionLine {
    id: String,
    prediction: String,
}

/// Parses a line-delimited prediction file: one `{"id", "prediction"}`
/// object per line. Blank lines are skipped; duplicate ids are an error.
pub fn parse_predictions(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if out.insert(rec.id.clone(), rec.prediction).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate id {:?}", rec.id),
            });
        }
    }
    Ok(out)
}

/// Inverse of [`parse_predictions`].
pub fn write_predictions(predictions: &BTreeMap<String, String>) -> String {
    let mut s = String::new();
    for (id, p) in predictions {
        let line = serde_json::json!({ "id": id, "prediction": p });
        s.push_str(&line.to_string());
        s.push('\n');
    }
    s
}
