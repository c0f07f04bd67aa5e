//! Service configuration, read from TOML.
//!
//! Relative paths are resolved against the directory of the config file.
//! `HUMEVAL_LISTEN` and `HUMEVAL_DATA_DIR` override the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use humeval_core::config::{default_task_specs, load_task_specs_file};
use humeval_core::dispatch::DispatchConfig;
use humeval_core::metrics::external::AdapterConfig;
use humeval_core::model::{AnnotatorProfile, Instance};
use humeval_core::uncertainty::DEFAULT_RESAMPLES;
use humeval_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::Result;
use crate::ratelimit::RateLimitConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    /// Every submission seed is derived from this.
    pub master_seed: u64,
    pub bootstrap_resamples: usize,
    /// 1 selects unilabeling; larger values collect that many labels per
    /// instance and aggregate them by mean.
    pub labels_per_instance: usize,
    /// Commits between snapshots.
    pub snapshot_every: u64,
    pub fsync: bool,
    pub rate_limit: RateLimitConfig,
    pub dispatch: DispatchConfig,
    /// Task definitions; the built-in four tasks when absent.
    pub tasks_file: Option<PathBuf>,
    /// Line-delimited instance files per task id.
    pub instances: BTreeMap<String, PathBuf>,
    /// Line-delimited annotator profiles registered at startup.
    pub annotators_file: Option<PathBuf>,
    /// Import the published reference results on startup.
    pub load_reference_fixtures: bool,
    pub external_metrics: Vec<AdapterConfig>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            master_seed: 0,
            bootstrap_resamples: DEFAULT_RESAMPLES,
            labels_per_instance: 1,
            snapshot_every: 200,
            fsync: true,
            rate_limit: RateLimitConfig::default(),
            dispatch: DispatchConfig::default(),
            tasks_file: None,
            instances: BTreeMap::new(),
            annotators_file: None,
            load_reference_fixtures: false,
            external_metrics: Vec::new(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ServiceConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ServiceConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml(&text, base)?;
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Ok(v) = std::env::var("HUMEVAL_LISTEN") {
            self.listen = v;
        }
        if let Ok(v) = std::env::var("HUMEVAL_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
    }

    fn resolve(&mut self, base: &Path) {
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut self.data_dir);
        if let Some(p) = self.tasks_file.as_mut() {
            abs(p);
        }
        if let Some(p) = self.annotators_file.as_mut() {
            abs(p);
        }
        for p in self.instances.values_mut() {
            abs(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels_per_instance == 0 {
            return Err(config_err("labels_per_instance must be at least 1").into());
        }
        if self.bootstrap_resamples < humeval_core::uncertainty::MIN_RESAMPLES {
            return Err(config_err(format!(
                "bootstrap_resamples must be at least {}",
                humeval_core::uncertainty::MIN_RESAMPLES
            ))
            .into());
        }
        if self.rate_limit.capacity == 0 || self.rate_limit.window_secs == 0 {
            return Err(config_err("rate limit capacity and window must be positive").into());
        }
        if self.dispatch.batch_size == 0 || self.dispatch.lease_timeout_secs <= 0 {
            return Err(config_err("batch size and lease timeout must be positive").into());
        }
        if self.snapshot_every == 0 {
            return Err(config_err("snapshot_every must be positive").into());
        }
        self.dispatch.schedule.tz()?;
        Ok(())
    }

    /// Tasks plus their instance files.
    pub fn load_catalog(&self) -> Result<Catalog> {
        let tasks = match &self.tasks_file {
            Some(p) => load_task_specs_file(p)?,
            None => default_task_specs(),
        };
        let mut instances = BTreeMap::new();
        for (task_id, path) in &self.instances {
            instances.insert(task_id.clone(), read_jsonl::<Instance>(path)?);
        }
        Ok(Catalog::new(tasks, instances)?)
    }

    pub fn load_annotators(&self) -> Result<Vec<AnnotatorProfile>> {
        match &self.annotators_file {
            Some(p) => read_jsonl(p),
            None => Ok(Vec::new()),
        }
    }
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    parse_jsonl(&text)
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
