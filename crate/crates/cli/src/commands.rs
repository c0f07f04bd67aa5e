use std::collections::{BTreeMap, BTreeSet};
use std::error::Error;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use chrono::{Days, NaiveDate, Utc};
use humeval_core::aggregation::{score_submission, AggregationPolicy, Combine, Labeling};
use humeval_core::dispatch::{Clock, LocalQueueBackend, SystemClock, VirtualClock};
use humeval_core::metrics::native_suite;
use humeval_core::model::{parse_predictions, validate_submission, AnnotationRecord, Usd};
use humeval_core::planner::{plan_budget, BudgetTarget, PlanOptions};
use humeval_core::rng::derive_seed;
use humeval_core::sim::{run_case_study, SimConfig};
use humeval_core::uncertainty::bootstrap_ci;
use humeval_service::config::read_jsonl;
use humeval_service::fixtures::reference_results;
use humeval_service::synthetic::simulated_pool;
use humeval_service::{Catalog, Service, ServiceConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::render;
use crate::{CombineArg, Command, Global};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

pub struct Report {
    pub json: Value,
    pub text: String,
    /// Exit status is zero only when set.
    pub ok: bool,
}

impl Report {
    fn new(value: &impl Serialize, text: String) -> Result<Self> {
        Ok(Self {
            json: serde_json::to_value(value)?,
            text,
            ok: true,
        })
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn config(global: &Global) -> Result<ServiceConfig> {
    let mut cfg = match &global.config {
        Some(p) => ServiceConfig::load(p)?,
        None => {
            let mut cfg = ServiceConfig::default();
            cfg.apply_env();
            cfg
        }
    };
    if let Some(seed) = global.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

/// The configured catalog, with `instances` replacing the file for `task`.
fn catalog(cfg: &ServiceConfig, task: &str, instances: Option<&PathBuf>) -> Result<Catalog> {
    let mut cfg = cfg.clone();
    if let Some(p) = instances {
        cfg.instances.insert(task.to_string(), p.clone());
    }
    Ok(cfg.load_catalog()?)
}

pub fn run(global: &Global, command: Command) -> Result<Report> {
    let seed = global.seed.unwrap_or(0);
    match command {
        Command::Validate {
            task,
            predictions,
            instances,
        } => {
            let cfg = config(global)?;
            let catalog = catalog(&cfg, &task, instances.as_ref())?;
            let spec = catalog.task(&task)?;
            let preds = parse_predictions(&read(&predictions)?)?;
            let ids: BTreeSet<String> = catalog.test_ids(&task).into_iter().collect();
            let report = validate_submission(&preds, spec, &ids)?;
            let mut out = Report::new(&report, render::validation(&task, &report))?;
            out.ok = report.is_ok();
            Ok(out)
        }
        Command::Submit {
            task,
            predictions,
            submitter,
            system_name,
            data_dir,
            simulate_crowd,
        } => {
            let mut cfg = config(global)?;
            if let Some(d) = data_dir {
                cfg.data_dir = d;
            }
            let preds = parse_predictions(&read(&predictions)?)?;
            submit(cfg, &task, &submitter, system_name, preds, simulate_crowd)
        }
        Command::PlanBudget {
            cost_per_instance,
            target_se,
            budget,
            labels_per_instance,
            granularity,
            available,
        } => {
            let cost = Usd::from_dollars(cost_per_instance)?;
            let target = match (target_se, budget) {
                (Some(se), _) => BudgetTarget::MaxSe(se),
                (None, Some(b)) => BudgetTarget::MaxCost(Usd::from_dollars(b)?),
                (None, None) => return Err("one of --target-se or --budget is required".into()),
            };
            let opts = PlanOptions {
                labels_per_instance,
                batch_granularity: granularity,
                available,
            };
            let plan = plan_budget(cost, target, opts)?;
            Report::new(&plan, render::plan(&plan))
        }
        Command::Score {
            task,
            annotations,
            combine,
            labels_per_instance,
            resamples,
            level,
        } => {
            let cfg = config(global)?;
            let catalog = cfg.load_catalog()?;
            let spec = catalog.task(&task)?;
            let records: Vec<AnnotationRecord> = read_jsonl(&annotations)?;
            let policy = AggregationPolicy {
                elicitation: spec.elicitation.kind,
                combine: match combine {
                    CombineArg::Mean => Combine::Mean,
                    CombineArg::MajorityVote => Combine::MajorityVote,
                },
                labeling: match labels_per_instance {
                    1 => Labeling::Unilabeling,
                    k => Labeling::Multilabeling { k },
                },
            };
            let scores = score_submission(&records, spec, &policy)?;
            let mut estimates = BTreeMap::new();
            for (aspect, s) in scores {
                let est = bootstrap_ci(&s.instance_scores, level, resamples, derive_seed(seed, &aspect, 0))?;
                estimates.insert(aspect, est);
            }
            let value = json!({ "task_id": task, "policy": policy, "aspects": estimates });
            Report::new(&value, render::scores(&task, &estimates))
        }
        Command::Bootstrap {
            scores,
            resamples,
            level,
        } => {
            let text = read(&scores)?;
            let xs: Vec<f64> = if text.trim_start().starts_with('[') {
                serde_json::from_str(&text)?
            } else {
                text.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
                    .collect::<std::result::Result<_, _>>()?
            };
            let est = bootstrap_ci(&xs, level, resamples, seed)?;
            Report::new(&est, render::estimate(&est))
        }
        Command::SimulateReproducibility {
            n,
            k,
            rounds,
            days,
            drift,
        } => {
            let first = NaiveDate::from_ymd_opt(2021, 3, 2).expect("valid date");
            let config = SimConfig {
                n_instances: n,
                k,
                rounds,
                days: (0..days as u64).map(|d| first + Days::new(d)).collect(),
                seed,
                drift_per_day: drift,
                ..SimConfig::default()
            };
            let report = run_case_study(&config)?;
            Report::new(&report, render::variance(&report))
        }
        Command::Metrics { hypotheses, references } => {
            let hyps: Vec<String> = read(&hypotheses)?.lines().map(String::from).collect();
            let mut refs: Vec<Vec<String>> = vec![Vec::new(); hyps.len()];
            for path in &references {
                let lines: Vec<String> = read(path)?.lines().map(String::from).collect();
                if lines.len() != hyps.len() {
                    return Err(format!(
                        "{} has {} lines, hypotheses have {}",
                        path.display(),
                        lines.len(),
                        hyps.len()
                    )
                    .into());
                }
                for (r, line) in refs.iter_mut().zip(lines) {
                    r.push(line);
                }
            }
            let metrics = native_suite(&hyps, &refs)?;
            Report::new(&metrics, render::metrics(&metrics))
        }
        Command::Serve {
            listen,
            data_dir,
            step_interval,
        } => {
            let mut cfg = config(global)?;
            if let Some(l) = listen {
                cfg.listen = l;
            }
            if let Some(d) = data_dir {
                cfg.data_dir = d;
            }
            serve(cfg, step_interval)
        }
    }
}

fn submit(
    cfg: ServiceConfig,
    task: &str,
    submitter: &str,
    system_name: Option<String>,
    predictions: BTreeMap<String, String>,
    simulate_crowd: Option<usize>,
) -> Result<Report> {
    let catalog = cfg.load_catalog()?;
    let Some(crowd) = simulate_crowd else {
        let mut svc = Service::open(cfg, catalog, Box::new(LocalQueueBackend), Arc::new(SystemClock))?;
        let receipt = svc.submit(task, submitter, system_name, predictions)?;
        let view = svc.get_submission(&receipt.submission_id)?;
        return Report::new(&view, render::submission(&view));
    };

    let instances: Vec<_> = catalog
        .tasks()
        .filter_map(|t| catalog.instances(&t.task_id))
        .flat_map(|m| m.values().cloned())
        .collect();
    let pool = simulated_pool(&instances, crowd, cfg.master_seed)?;
    let profiles = pool.profiles(catalog.tasks().map(|t| t.task_id.as_str()).collect::<Vec<_>>());
    let clock = VirtualClock::new(Utc::now());
    let mut svc = Service::open(cfg, catalog, Box::new(pool), Arc::new(clock.clone()))?;
    for p in profiles {
        svc.register_annotator(p)?;
    }
    let receipt = svc.submit(task, submitter, system_name, predictions)?;
    svc.run_pipeline_step()?;
    if let Some(at) = svc.get_submission(&receipt.submission_id)?.release_at {
        if at > clock.now() {
            clock.set(at);
        }
    }
    svc.run_until_idle(20)?;
    let view = svc.get_submission(&receipt.submission_id)?;
    let mut out = Report::new(&view, render::submission(&view))?;
    out.ok = view.failure.is_none();
    Ok(out)
}

fn serve(cfg: ServiceConfig, step_interval: u64) -> Result<Report> {
    let catalog = cfg.load_catalog()?;
    let annotators = cfg.load_annotators()?;
    let listen = cfg.listen.clone();
    let fixtures = cfg.load_reference_fixtures;
    let mut svc = Service::open(cfg, catalog, Box::new(LocalQueueBackend), Arc::new(SystemClock))?;
    for a in annotators {
        svc.register_annotator(a)?;
    }
    if fixtures {
        svc.import_fixtures(&reference_results())?;
    }
    let shared = Arc::new(RwLock::new(svc));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        if step_interval > 0 {
            let s = shared.clone();
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(Duration::from_secs(step_interval));
                loop {
                    tick.tick().await;
                    let s = s.clone();
                    let result = tokio::task::spawn_blocking(move || {
                        s.write().unwrap_or_else(|e| e.into_inner()).run_pipeline_step()
                    })
                    .await;
                    if let Ok(Err(e)) = result {
                        eprintln!("pipeline step failed: {e}");
                    }
                }
            });
        }
        eprintln!("listening on {listen}");
        humeval_service::http::serve(shared, &listen).await
    })?;
    Report::new(&json!({ "status": "stopped" }), "stopped\n".into())
}
