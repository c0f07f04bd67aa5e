//! Acceptance suite. Prints one line per criterion and exits non-zero if
//! any fails. Run with `cargo test -p humeval-service --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::DateTime;
use humeval_core::aggregation::{likert_to_score, Combine};
use humeval_core::dispatch::{AnnotationBackend, Completion, PublishedBatch, SimulatedPool};
use humeval_core::metrics::{bleu_corpus, bleu_stats, rouge_l, tokenize};
use humeval_core::model::{SchemeKind, Usd};
use humeval_core::planner::{plan_budget, BudgetTarget, PlanOptions};
use humeval_core::rng::{derive_seed, rng_from_seed};
use humeval_core::sim::{
    closed_form_variance, resample_policy_scores, run_case_study, variance_components, Policy, SimConfig,
};
use humeval_core::uncertainty::{bhatia_davis_sigma_max, bootstrap_ci, standard_error};
use humeval_service::fixtures::reference_results;
use humeval_service::synthetic::simulated_pool;
use humeval_service::{LeaderboardEntry, Service};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration) -> Outcome {
    if elapsed < limit {
        Ok(format!("{:.2}s", elapsed.as_secs_f64()))
    } else {
        Err(format!(
            "took {:.1}s, limit {:.0}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        ))
    }
}

fn se_arithmetic() -> Outcome {
    let start = Instant::now();
    let se800 = standard_error(0.5, 800).map_err(|e| e.to_string())?;
    let se300 = standard_error(0.5, 300).map_err(|e| e.to_string())?;
    ensure!((se800 - 0.01768).abs() <= 5e-5, "SE(0.5, 800) = {se800}");
    ensure!((se300 - 0.02887).abs() <= 5e-5, "SE(0.5, 300) = {se300}");
    ensure!(
        (se800 - 0.5 / 800f64.sqrt()).abs() < 1e-15,
        "SE(0.5, 800) disagrees with sigma/sqrt(n)"
    );
    // sqrt((1 - mu)(mu - 0)) on [0, 1].
    let bd08 = bhatia_davis_sigma_max(0.8, 0.0, 1.0).map_err(|e| e.to_string())?;
    let bd05 = bhatia_davis_sigma_max(0.5, 0.0, 1.0).map_err(|e| e.to_string())?;
    ensure!(bd08 == 0.4, "sigma_max(0.8) = {bd08}");
    ensure!(bd05 == 0.5, "sigma_max(0.5) = {bd05}");
    let t = within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("SE800={se800:.5} SE300={se300:.5} sigma_max=0.4/0.5 in {t}"))
}

fn likert_mapping() -> Outcome {
    let got: Vec<f64> = (0..5).map(|c| likert_to_score(c).unwrap()).collect();
    ensure!(got == [0.0, 0.25, 0.5, 0.75, 1.0], "mapped to {got:?}");
    ensure!(likert_to_score(5).is_err(), "category 5 accepted");
    Ok(format!("{got:?}"))
}

fn budget_planner() -> Outcome {
    let dollars = |d: f64| Usd::from_dollars(d).unwrap();
    let by_se =
        plan_budget(dollars(0.10), BudgetTarget::MaxSe(0.0177), PlanOptions::default()).map_err(|e| e.to_string())?;
    ensure!(by_se.n_instances == 800, "target SE gives n = {}", by_se.n_instances);
    ensure!(
        by_se.total_cost == dollars(80.0),
        "target SE costs {}",
        by_se.total_cost
    );
    let by_cost = plan_budget(
        dollars(0.30),
        BudgetTarget::MaxCost(dollars(90.0)),
        PlanOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure!(by_cost.n_instances == 300, "budget gives n = {}", by_cost.n_instances);
    Ok(format!("n=800 for {}; n=300 for $90.00", by_se.total_cost))
}

fn bootstrap_coverage() -> Outcome {
    let start = Instant::now();
    let (p, n, trials) = (0.7, 300, 500);
    let mut covered = 0;
    for t in 0..trials {
        let mut rng = rng_from_seed(derive_seed(2021, "coverage", t));
        let xs: Vec<f64> = (0..n).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect();
        let est = bootstrap_ci(&xs, 0.95, 10_000, derive_seed(2021, "resample", t)).map_err(|e| e.to_string())?;
        if est.ci_low <= p && p <= est.ci_high {
            covered += 1;
        }
    }
    let coverage = covered as f64 / trials as f64;
    ensure!((0.92..=0.97).contains(&coverage), "coverage {coverage}");
    let t = within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!("coverage {coverage:.3} in {t}"))
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn uni_vs_multi() -> Outcome {
    let (n, k) = (360, 3);
    let mut rng = rng_from_seed(77);
    let groups: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            let center: f64 = rng.random_range(0.0..4.0);
            (0..k)
                .map(|_| (center + rng.random_range(-1.2..1.2)).round().clamp(0.0, 4.0) as u8)
                .collect()
        })
        .collect();
    let values: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| g.iter().map(|&l| l as f64 * 0.25).collect())
        .collect();

    // Exact variance of each resampling scheme for this pool: instance means
    // drawn n/k times, or single labels drawn n times from the whole pool.
    let means: Vec<f64> = values.iter().map(|g| g.iter().sum::<f64>() / k as f64).collect();
    let all: Vec<f64> = values.iter().flatten().copied().collect();
    let pop_var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
    };
    let x = n / k;
    let oracle_multi = pop_var(&means) / x as f64;
    let oracle_uni = pop_var(&all) / n as f64;

    let (sb2, sw2) = variance_components(&values).map_err(|e| e.to_string())?;
    let (cf_multi, cf_uni) = closed_form_variance(sb2, sw2, x, k).map_err(|e| e.to_string())?;
    ensure!(
        (cf_multi - oracle_multi).abs() < 1e-12,
        "closed form multi {cf_multi} vs {oracle_multi}"
    );
    ensure!(
        (cf_uni - oracle_uni).abs() < 1e-12,
        "closed form uni {cf_uni} vs {oracle_uni}"
    );

    let seeds = 20;
    let mut sim = [0.0; 2];
    for (i, policy) in [Policy::Multilabeling, Policy::Unilabeling].into_iter().enumerate() {
        for s in 0..seeds {
            let scores = resample_policy_scores(&groups, SchemeKind::Likert5, Combine::Mean, policy, 500, s)
                .map_err(|e| e.to_string())?;
            sim[i] += sample_variance(&scores) / seeds as f64;
        }
    }
    let rel_multi = (sim[0] - cf_multi).abs() / cf_multi;
    let rel_uni = (sim[1] - cf_uni).abs() / cf_uni;
    ensure!(
        rel_multi <= 0.10,
        "multilabeling variance {} vs closed form {cf_multi}",
        sim[0]
    );
    ensure!(
        rel_uni <= 0.10,
        "unilabeling variance {} vs closed form {cf_uni}",
        sim[1]
    );

    let mut rng = rng_from_seed(78);
    for _ in 0..1000 {
        let sb2: f64 = rng.random_range(0.0..0.1);
        let sw2: f64 = rng.random_range(0.0..0.1);
        let x = rng.random_range(1..500);
        let k = rng.random_range(1..8);
        let (multi, uni) = closed_form_variance(sb2, sw2, x, k).map_err(|e| e.to_string())?;
        ensure!(
            uni <= multi,
            "var_uni {uni} > var_multi {multi} at sb2={sb2} sw2={sw2} x={x} k={k}"
        );
    }
    Ok(format!(
        "relative error multi {:.1}%, uni {:.1}%; var_uni <= var_multi on 1000 draws",
        rel_multi * 100.0,
        rel_uni * 100.0
    ))
}

fn case_study() -> Outcome {
    let start = Instant::now();
    let config = SimConfig::default();
    ensure!(
        config.n_instances == 360 && config.k == 3 && config.rounds == 500 && config.days.len() == 3,
        "default configuration is not the reference scale"
    );
    let report = run_case_study(&config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let grid: BTreeSet<_> = report
        .cells
        .iter()
        .map(|c| (c.scheme.to_string(), format!("{:?}", c.combine), c.policy, c.day))
        .collect();
    ensure!(
        report.cells.len() == 24 && grid.len() == 24,
        "{} cells, {} distinct",
        report.cells.len(),
        grid.len()
    );
    ensure!(
        report.cells.iter().all(|c| c.rounds == 500),
        "a cell ran fewer than 500 rounds"
    );
    let t = within(elapsed, Duration::from_secs(60))?;
    Ok(format!("24 cells in {t}"))
}

fn toks(s: &str) -> Vec<String> {
    tokenize(s)
}

fn metric_oracles() -> Outcome {
    let text = "the quick brown fox jumps over the lazy dog".to_string();
    let bleu = bleu_corpus(std::slice::from_ref(&text), &[vec![text.clone()]], 4).map_err(|e| e.to_string())?;
    ensure!(
        bleu.corpus_score == 100.0,
        "BLEU of identical text {}",
        bleu.corpus_score
    );
    let rl = rouge_l(&toks(&text), &toks(&text)).f;
    ensure!(rl == 1.0, "ROUGE-L of identical text {rl}");

    let hyp = toks("the the the the the the the");
    let reference = toks("the cat is on the mat");
    // Each hypothesis token counts at most as often as it occurs in the reference.
    let clip = hyp
        .iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|w| {
            hyp.iter()
                .filter(|t| *t == w)
                .count()
                .min(reference.iter().filter(|t| *t == w).count())
        })
        .sum::<usize>();
    ensure!(clip == 2, "hand oracle gives {clip}");
    let stats = bleu_stats(std::slice::from_ref(&hyp), &[vec![reference]], 4).map_err(|e| e.to_string())?;
    ensure!(
        stats.matches[0] == clip && stats.totals[0] == hyp.len(),
        "unigram stats {}/{}",
        stats.matches[0],
        stats.totals[0]
    );
    ensure!(
        stats.precision(1) == 2.0 / 7.0,
        "unigram precision {}",
        stats.precision(1)
    );

    let l = |s: &[&str]| s.iter().map(|w| w.to_string()).collect::<Vec<_>>();
    let f = rouge_l(&l(&["a", "b", "c", "d"]), &l(&["a", "c", "d", "e"])).f;
    ensure!(f == 0.75, "ROUGE-L abcd/acde = {f}");
    Ok("BLEU 100, ROUGE-L 1.0, clipped 2/7, ROUGE-L 0.75".into())
}

fn full_run(seed: u64) -> Result<LeaderboardEntry, String> {
    let mut e = common::env(&[("wmt19", 800)], seed);
    e.config.bootstrap_resamples = 10_000;
    let mut svc = e.open_sim();
    svc.submit(
        "wmt19",
        "team",
        Some("system".into()),
        e.predictions("wmt19", 0.7, seed),
    )
    .map_err(|e| e.to_string())?;
    svc.run_pipeline_step().map_err(|e| e.to_string())?;
    e.clock.set(common::tuesday_release());
    svc.run_until_idle(10).map_err(|e| e.to_string())?;
    let board = svc.get_leaderboard("wmt19", None).map_err(|e| e.to_string())?;
    board
        .ranked
        .into_iter()
        .next()
        .ok_or_else(|| "submission was not scored".to_string())
}

fn end_to_end_determinism() -> Outcome {
    let start = Instant::now();
    let a = full_run(31)?;
    let b = full_run(31)?;
    let est = &a.human["adequacy"];
    ensure!(est.n == 800, "scored {} instances", est.n);
    ensure!(!a.metrics.is_empty(), "no automatic metrics");
    let (ja, jb) = (serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    ensure!(ja == jb, "runs differ");
    ensure!(a == b, "entries differ");
    let t = within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "mean {:.4} CI [{:.4}, {:.4}] identical across runs, {t}",
        est.mean, est.ci_low, est.ci_high
    ))
}

fn fixture_ranking() -> Outcome {
    let e = common::env(&[("wmt19", 10)], 1);
    let mut svc = e.open_sim();
    svc.import_fixtures(&reference_results()).map_err(|e| e.to_string())?;
    let board = svc.get_leaderboard("wmt19", None).map_err(|e| e.to_string())?;
    let order: Vec<String> = board.ranked.iter().filter_map(|r| r.system_name.clone()).collect();
    ensure!(
        order == ["FairSeq-large", "FAIR", "JHU", "FairSeq-base"],
        "order {order:?}"
    );
    Ok(order.join(" > "))
}

/// Accepts released work, then fails on the first poll as if the process
/// died between handing out batches and collecting labels.
struct CrashingBackend(SimulatedPool);

impl AnnotationBackend for CrashingBackend {
    fn release(&mut self, batch: &PublishedBatch) -> humeval_core::Result<()> {
        self.0.release(batch)
    }
    fn poll(&mut self, _now: DateTime<chrono::Utc>) -> humeval_core::Result<Vec<Completion>> {
        Err(humeval_core::Error::Config("backend crashed".into()))
    }
    fn expire(&mut self, assignment_id: &str) -> humeval_core::Result<()> {
        self.0.expire(assignment_id)
    }
}

fn event_log_replay() -> Outcome {
    let seed = 44;
    let uninterrupted = {
        let e = common::env(&[("wmt19", 200), ("xsum", 40)], seed);
        let mut svc = e.open_sim();
        svc.submit("wmt19", "a", None, e.predictions("wmt19", 0.6, 1))
            .map_err(|e| e.to_string())?;
        svc.submit("xsum", "b", None, e.predictions("xsum", 0.6, 2))
            .map_err(|e| e.to_string())?;
        svc.run_pipeline_step().map_err(|e| e.to_string())?;
        e.clock.set(common::tuesday_release());
        svc.run_until_idle(10).map_err(|e| e.to_string())?;
        ["sub-000001", "sub-000002"].map(|id| svc.get_submission(id).unwrap())
    };

    let e = common::env(&[("wmt19", 200), ("xsum", 40)], seed);
    {
        let mut svc = e.open_sim();
        svc.submit("wmt19", "a", None, e.predictions("wmt19", 0.6, 1))
            .map_err(|e| e.to_string())?;
        svc.submit("xsum", "b", None, e.predictions("xsum", 0.6, 2))
            .map_err(|e| e.to_string())?;
        svc.run_pipeline_step().map_err(|e| e.to_string())?;
    }
    e.clock.set(common::tuesday_release());
    {
        let all: Vec<_> = e.instances.values().flatten().cloned().collect();
        let pool = simulated_pool(&all, 5, seed).map_err(|e| e.to_string())?;
        let mut svc = Service::open(
            e.config.clone(),
            e.catalog(),
            Box::new(CrashingBackend(pool)),
            Arc::new(e.clock.clone()),
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            svc.run_pipeline_step().is_err(),
            "crashing backend did not fail the step"
        );
    }
    // A write cut short by the crash.
    let log = e.config.data_dir.join("events.jsonl");
    let mut bytes = std::fs::read(&log).map_err(|e| e.to_string())?;
    bytes.extend_from_slice(br#"{"seq":999,"at":"2021-03-02T18:00:00Z","events":[{"ty"#);
    std::fs::write(&log, bytes).map_err(|e| e.to_string())?;

    let mut svc = e.open_sim();
    let replayed = Service::replay(&e.config).map_err(|e| e.to_string())?;
    ensure!(svc.state() == &replayed, "restored state differs from a full replay");
    let stored = svc
        .state()
        .submissions
        .values()
        .flat_map(|r| r.batch_ids.iter())
        .filter(|b| svc.state().dispatcher.batch(b).is_some())
        .count();
    let mut ids = BTreeSet::new();
    for rec in svc.state().submissions.values() {
        for b in &rec.batch_ids {
            ensure!(ids.insert(b.clone()), "duplicate batch {b}");
        }
    }
    // 200 wmt19 instances and 40 xsum instances, batches of 20 items, five
    // xsum aspects.
    ensure!(ids.len() == 10 + 10 && stored == ids.len(), "{} batches", ids.len());

    svc.run_until_idle(10).map_err(|e| e.to_string())?;
    let mut batch_count = 0;
    for rec in svc.state().submissions.values() {
        batch_count += rec.batch_ids.len();
    }
    ensure!(batch_count == ids.len(), "batches were created again after restart");
    let after = ["sub-000001", "sub-000002"].map(|id| svc.get_submission(id).unwrap());
    for (a, b) in after.iter().zip(&uninterrupted) {
        ensure!(
            a.human == b.human,
            "{} scores differ from an uninterrupted run",
            a.submission_id
        );
    }
    ensure!(
        svc.state() == &Service::replay(&e.config).map_err(|e| e.to_string())?,
        "final state differs from replay"
    );
    Ok(format!(
        "{} batches, state equals replay, scores match uninterrupted run",
        ids.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("standard error and Bhatia-Davis arithmetic", se_arithmetic),
        ("Likert category mapping", likert_mapping),
        ("budget planner", budget_planner),
        ("bootstrap CI coverage", bootstrap_coverage),
        ("unilabeling vs multilabeling variance", uni_vs_multi),
        ("reproducibility case study grid", case_study),
        ("automatic metric oracles", metric_oracles),
        ("end-to-end determinism", end_to_end_determinism),
        ("reference fixture ranking", fixture_ranking),
        ("event log replay after crash", event_log_replay),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
