#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use humeval_core::config::default_task_specs;
use humeval_core::dispatch::{LocalQueueBackend, VirtualClock};
use humeval_core::model::{AnnotatorProfile, Instance};
use humeval_service::synthetic::{simulated_pool, synthetic_instances, synthetic_predictions};
use humeval_service::{Catalog, Service, ServiceConfig};
use tempfile::TempDir;

/// Monday 2021-03-01, 12:00 Pacific.
pub fn monday_noon() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 3, 1, 20, 0, 0).unwrap()
}

/// Tuesday 2021-03-02, 10:00 Pacific: the first release after `monday_noon`.
pub fn tuesday_release() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 3, 2, 18, 0, 0).unwrap()
}

pub struct Env {
    pub dir: TempDir,
    pub config: ServiceConfig,
    pub instances: BTreeMap<String, Vec<Instance>>,
    pub clock: VirtualClock,
}

pub fn env(sizes: &[(&str, usize)], master_seed: u64) -> Env {
    let tasks = default_task_specs();
    let mut instances = BTreeMap::new();
    for (task_id, n) in sizes {
        let task = tasks.iter().find(|t| t.task_id == *task_id).expect("known task");
        instances.insert(task_id.to_string(), synthetic_instances(task, *n, master_seed));
    }
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        data_dir: dir.path().join("data"),
        master_seed,
        bootstrap_resamples: 2000,
        fsync: false,
        ..ServiceConfig::default()
    };
    Env {
        dir,
        config,
        instances,
        clock: VirtualClock::new(monday_noon()),
    }
}

impl Env {
    pub fn catalog(&self) -> Catalog {
        Catalog::new(default_task_specs(), self.instances.clone()).unwrap()
    }

    fn all_instances(&self) -> Vec<Instance> {
        self.instances.values().flatten().cloned().collect()
    }

    /// Service backed by a five-member simulated crowd.
    pub fn open_sim(&self) -> Service {
        let pool = simulated_pool(&self.all_instances(), 5, self.config.master_seed).unwrap();
        let profiles = pool.profiles(self.instances.keys().map(String::as_str).collect::<Vec<_>>());
        let mut svc = Service::open(
            self.config.clone(),
            self.catalog(),
            Box::new(pool),
            Arc::new(self.clock.clone()),
        )
        .unwrap();
        for p in profiles {
            svc.register_annotator(p).unwrap();
        }
        svc
    }

    /// Service whose annotators pull work themselves.
    pub fn open_local(&self) -> Service {
        Service::open(
            self.config.clone(),
            self.catalog(),
            Box::new(LocalQueueBackend),
            Arc::new(self.clock.clone()),
        )
        .unwrap()
    }

    pub fn predictions(&self, task_id: &str, quality: f64, seed: u64) -> BTreeMap<String, String> {
        synthetic_predictions(&self.instances[task_id], quality, seed)
    }
}

pub fn qualified(id: &str, tasks: &[&str]) -> AnnotatorProfile {
    AnnotatorProfile {
        annotator_id: id.into(),
        locale: "US".into(),
        hits_completed: 6000,
        approval_rate: 0.995,
        passed_qual_tests: tasks.iter().map(|s| s.to_string()).collect(),
    }
}
