use std::collections::BTreeMap;

use humeval_core::model::{Instance, Split, TaskSpec};
use humeval_core::{Error, Result};

/// Tasks and their instances, fixed for the lifetime of a service.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    tasks: BTreeMap<String, TaskSpec>,
    instances: BTreeMap<String, BTreeMap<String, Instance>>,
}

impl Catalog {
    pub fn new(tasks: Vec<TaskSpec>, instances: BTreeMap<String, Vec<Instance>>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for t in tasks {
            t.validate()?;
            let id = t.task_id.clone();
            if by_id.insert(id.clone(), t).is_some() {
                return Err(Error::Config(format!("duplicate task {id}")));
            }
        }
        let mut inst_map = BTreeMap::new();
        for (task_id, list) in instances {
            if !by_id.contains_key(&task_id) {
                return Err(Error::Config(format!("instances given for unknown task {task_id}")));
            }
            let mut m = BTreeMap::new();
            for inst in list {
                let id = inst.instance_id.clone();
                if m.insert(id.clone(), inst).is_some() {
                    return Err(Error::Config(format!("task {task_id}: duplicate instance {id}")));
                }
            }
            inst_map.insert(task_id, m);
        }
        Ok(Self {
            tasks: by_id,
            instances: inst_map,
        })
    }

    pub fn task(&self, task_id: &str) -> Result<&TaskSpec> {
        self.tasks.get(task_id).ok_or_else(|| Error::NotFound {
            kind: "task",
            id: task_id.to_string(),
        })
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.values()
    }

    pub fn instances(&self, task_id: &str) -> Option<&BTreeMap<String, Instance>> {
        self.instances.get(task_id)
    }

    /// Sorted ids of the task's test split.
    pub fn test_ids(&self, task_id: &str) -> Vec<String> {
        self.instances
            .get(task_id)
            .map(|m| {
                m.values()
                    .filter(|i| i.split == Split::Test)
                    .map(|i| i.instance_id.clone())
                    .collect()
            })
            .unwrap_or_default()
    }
}
