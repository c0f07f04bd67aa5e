//! Evaluation subset sampling and sample-size planning.
//!
//! Worst-case standard error assumes the maximal per-label standard
//! deviation of 0.5 for scores in [0, 1]. Planned sizes are rounded to whole
//! dispatch batches: up when meeting an SE target, down when staying within
//! a cost cap.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Usd;
use crate::rng::rng_from_seed;

/// Largest possible standard deviation of a score in [0, 1].
pub const WORST_CASE_SIGMA: f64 = 0.5;

/// Default number of items per annotation batch.
pub const DEFAULT_BATCH_SIZE: usize = 20;

/// Uniform sample of `n` ids without replacement, in draw order.
pub fn sample_eval_subset(test_ids: &[String], n: usize, seed: u64) -> Result<Vec<String>> {
    if n > test_ids.len() {
        return Err(Error::domain(format!(
            "cannot sample {n} of {} test ids",
            test_ids.len()
        )));
    }
    let mut ids = test_ids.to_vec();
    let mut rng = rng_from_seed(seed);
    let (picked, _) = ids.partial_shuffle(&mut rng, n);
    Ok(picked.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum BudgetTarget {
    MaxCost(Usd),
    MaxSe(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// Labels collected per instance (1 under unilabeling).
    pub labels_per_instance: usize,
    /// Planned instance counts are multiples of this.
    pub batch_granularity: usize,
    /// Size of the pool the subset is drawn from, if bounded.
    pub available: Option<usize>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            labels_per_instance: 1,
            batch_granularity: DEFAULT_BATCH_SIZE,
            available: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub n_instances: usize,
    /// Smallest count meeting the target before rounding to whole batches.
    pub n_required: usize,
    pub labels_per_instance: usize,
    pub per_instance_cost: Usd,
    pub total_cost: Usd,
    pub worst_case_se: f64,
    pub target: BudgetTarget,
}

fn worst_case_se(n_instances: usize, k: usize) -> f64 {
    WORST_CASE_SIGMA / ((n_instances * k) as f64).sqrt()
}

pub fn plan_budget(per_instance_cost: Usd, target: BudgetTarget, opts: PlanOptions) -> Result<BudgetPlan> {
    let k = opts.labels_per_instance;
    let g = opts.batch_granularity;
    if per_instance_cost == Usd::ZERO {
        return Err(Error::Planning("per-instance cost must be positive".into()));
    }
    if k == 0 || g == 0 {
        return Err(Error::Planning(
            "labels per instance and batch granularity must be positive".into(),
        ));
    }
    let label_cost = per_instance_cost
        .checked_mul(k as u64)
        .ok_or_else(|| Error::Planning("cost overflow".into()))?;

    let (n_required, n_instances) = match target {
        BudgetTarget::MaxSe(se) => {
            if !(se > 0.0 && se.is_finite()) {
                return Err(Error::Planning(format!("invalid SE target {se}")));
            }
            let labels = ((WORST_CASE_SIGMA / se).powi(2) - 1e-9).ceil().max(1.0) as usize;
            let n = labels.div_ceil(k);
            (n, n.div_ceil(g) * g)
        }
        BudgetTarget::MaxCost(budget) => {
            let n = (budget.micros() / label_cost.micros()) as usize;
            let n_batched = n / g * g;
            if n_batched == 0 {
                return Err(Error::Planning(format!(
                    "budget {budget} does not cover one batch of {g} at {label_cost} per instance"
                )));
            }
            (n, n_batched)
        }
    };

    if let Some(avail) = opts.available {
        if n_instances > avail {
            return Err(Error::Planning(format!(
                "plan needs {n_instances} instances but only {avail} are available"
            )));
        }
    }

    let total_cost = label_cost
        .checked_mul(n_instances as u64)
        .ok_or_else(|| Error::Planning("cost overflow".into()))?;
    Ok(BudgetPlan {
        n_instances,
        n_required,
        labels_per_instance: k,
        per_instance_cost,
        total_cost,
        worst_case_se: worst_case_se(n_instances, k),
        target,
    })
}
