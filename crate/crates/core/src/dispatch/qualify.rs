use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::AnnotatorProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualificationRule {
    pub allowed_locales: BTreeSet<String>,
    pub min_hits: u64,
    pub min_approval: f64,
    pub requires_qual_test: bool,
}

impl Default for QualificationRule {
    /// Predominantly English-speaking locales, 5000 completed HITs and at
    /// least 99% approval, plus the task's qualification test.
    fn default() -> Self {
        Self {
            allowed_locales: ["US", "CA", "GB", "AU"].iter().map(|s| s.to_string()).collect(),
            min_hits: 5000,
            min_approval: 0.99,
            requires_qual_test: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IneligibleReason {
    Locale,
    MinHits,
    MinApproval,
    QualTest,
}

impl IneligibleReason {
    pub fn as_str(self) -> &'static str {
        match self {
            IneligibleReason::Locale => "locale",
            IneligibleReason::MinHits => "min_hits",
            IneligibleReason::MinApproval => "min_approval",
            IneligibleReason::QualTest => "qual_test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reasons", rename_all = "snake_case")]
pub enum Eligibility {
    Eligible,
    Ineligible(Vec<IneligibleReason>),
}

impl Eligibility {
    pub fn is_eligible(&self) -> bool {
        matches!(self, Eligibility::Eligible)
    }
}

/// Checks every rule and lists each one the profile fails.
pub fn qualify(profile: &AnnotatorProfile, rule: &QualificationRule, task_id: &str) -> Eligibility {
    let mut reasons = Vec::new();
    if !rule.allowed_locales.contains(&profile.locale) {
        reasons.push(IneligibleReason::Locale);
    }
    if profile.hits_completed < rule.min_hits {
        reasons.push(IneligibleReason::MinHits);
    }
    if profile.approval_rate < rule.min_approval {
        reasons.push(IneligibleReason::MinApproval);
    }
    if rule.requires_qual_test && !profile.passed_qual_tests.contains(task_id) {
        reasons.push(IneligibleReason::QualTest);
    }
    if reasons.is_empty() {
        Eligibility::Eligible
    } else {
        Eligibility::Ineligible(reasons)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(locale: &str, hits: u64, approval: f64, passed: bool) -> AnnotatorProfile {
        AnnotatorProfile {
            annotator_id: "w1".into(),
            locale: locale.into(),
            hits_completed: hits,
            approval_rate: approval,
            passed_qual_tests: if passed {
                ["arc-da".to_string()].into()
            } else {
                BTreeSet::new()
            },
        }
    }

    #[test]
    fn thresholds() {
        let rule = QualificationRule::default();
        assert!(qualify(&profile("US", 6000, 0.995, true), &rule, "arc-da").is_eligible());
        assert_eq!(
            qualify(&profile("US", 4999, 0.995, true), &rule, "arc-da"),
            Eligibility::Ineligible(vec![IneligibleReason::MinHits])
        );
        assert!(qualify(&profile("US", 5000, 0.99, true), &rule, "arc-da").is_eligible());
    }

    #[test]
    fn every_failure_is_reported() {
        let rule = QualificationRule::default();
        assert_eq!(
            qualify(&profile("FR", 10, 0.5, false), &rule, "arc-da"),
            Eligibility::Ineligible(vec![
                IneligibleReason::Locale,
                IneligibleReason::MinHits,
                IneligibleReason::MinApproval,
                IneligibleReason::QualTest,
            ])
        );
        assert!(!qualify(&profile("US", 6000, 0.995, true), &rule, "xsum").is_eligible());
    }
}
