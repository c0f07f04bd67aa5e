//! Human-readable report text.

use std::collections::BTreeMap;
use std::fmt::Write;

use humeval_core::metrics::MetricResult;
use humeval_core::model::ValidationReport;
use humeval_core::planner::{BudgetPlan, BudgetTarget};
use humeval_core::sim::{combine_name, VarianceReport};
use humeval_core::uncertainty::ScoreEstimate;
use humeval_service::SubmissionView;

pub fn validation(task: &str, report: &ValidationReport) -> String {
    if report.is_ok() {
        return format!("{task}: predictions are complete\n");
    }
    let mut s = format!("{task}: {} violation(s)\n", report.violations.len());
    for v in &report.violations {
        let _ = writeln!(s, "  {v}");
    }
    s
}

pub fn plan(p: &BudgetPlan) -> String {
    let target = match p.target {
        BudgetTarget::MaxSe(se) => format!("standard error <= {se}"),
        BudgetTarget::MaxCost(c) => format!("budget {c}"),
    };
    format!(
        "target:              {target}\n\
         instances:           {} (required {})\n\
         labels per instance: {}\n\
         cost per instance:   {}\n\
         total cost:          {}\n\
         worst-case SE:       {:.5}\n",
        p.n_instances, p.n_required, p.labels_per_instance, p.per_instance_cost, p.total_cost, p.worst_case_se
    )
}

pub fn estimate(e: &ScoreEstimate) -> String {
    format!(
        "mean {:.4}  {:.0}% CI [{:.4}, {:.4}]  n={}  {}\n",
        e.mean,
        e.level * 100.0,
        e.ci_low,
        e.ci_high,
        e.n,
        e.display_percent()
    )
}

pub fn scores(task: &str, estimates: &BTreeMap<String, ScoreEstimate>) -> String {
    let mut s = format!("{task}\n");
    for (aspect, e) in estimates {
        let _ = write!(s, "  {aspect:<14} {}", estimate(e));
    }
    s
}

pub fn variance(r: &VarianceReport) -> String {
    let mut s = r.to_table();
    s.push('\n');
    s.push_str("scheme\tcombine\tpolicy\tvariance\n");
    for v in &r.settings {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.3e}",
            v.scheme,
            combine_name(v.combine),
            v.policy.name(),
            v.variance
        );
    }
    s
}

pub fn metrics(ms: &[MetricResult]) -> String {
    let mut s = String::new();
    for m in ms {
        let _ = writeln!(
            s,
            "{:<12} {:>8.2}  {}",
            m.metric_name, m.corpus_score, m.config_fingerprint
        );
    }
    s
}

pub fn submission(v: &SubmissionView) -> String {
    let mut s = format!("{} [{}] {} on {}\n", v.submission_id, v.status, v.submitter, v.task_id);
    if let Some(at) = v.release_at {
        let _ = writeln!(s, "  release:  {at}");
    }
    if v.progress.total > 0 {
        let _ = writeln!(s, "  progress: {}/{}", v.progress.completed, v.progress.total);
    }
    for (aspect, e) in &v.human {
        let _ = writeln!(s, "  {aspect:<14} {}", e.display_percent());
    }
    for m in &v.metrics {
        let _ = writeln!(s, "  {:<14} {:.2}", m.metric_name, m.corpus_score);
    }
    if let Some(f) = &v.failure {
        let _ = writeln!(s, "  failed: {f}");
    }
    s
}
