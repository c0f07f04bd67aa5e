//! Task configuration files (TOML).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskSpec;

/// The shipped configuration with the four built-in tasks.
pub const DEFAULT_TASKS_TOML: &str = include_str!("../config/tasks.toml");

#[derive(Debug, Default, Serialize, Deserialize)]
struct TaskFile {
    #[serde(default)]
    tasks: Vec<TaskSpec>,
}

/// Parses and validates task specs. Duplicate task ids are rejected.
pub fn load_task_specs(source: &str) -> Result<Vec<TaskSpec>> {
    let file: TaskFile = toml::from_str(source).map_err(|e| Error::Config(e.to_string()))?;
    let mut seen = BTreeSet::new();
    for t in &file.tasks {
        t.validate()?;
        if !seen.insert(t.task_id.as_str()) {
            return Err(Error::Config(format!("duplicate task_id {:?}", t.task_id)));
        }
    }
    Ok(file.tasks)
}

pub fn load_task_specs_file(path: &Path) -> Result<Vec<TaskSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    load_task_specs(&text)
}

pub fn default_task_specs() -> Vec<TaskSpec> {
    load_task_specs(DEFAULT_TASKS_TOML).expect("shipped task config is valid")
}

pub fn render_task_specs(tasks: &[TaskSpec]) -> Result<String> {
    toml::to_string(&TaskFile { tasks: tasks.to_vec() }).map_err(|e| Error::Config(e.to_string()))
}
