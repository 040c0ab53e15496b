//! JSON task-set file format.
//!
//! ```json
//! {
//!   "processors": ["P1", "P2"],
//!   "tasks": [
//!     { "id": "T1", "period": 10, "deadline": 20, "default_h": 0.5, "default_k": 0.25,
//!       "chain": [ { "processor": "P1", "mandatory": 2, "optional": 1 },
//!                  { "processor": "P2", "mandatory": 3, "optional": 4, "k": 1.0 } ] }
//!   ]
//! }
//! ```
//!
//! Chain order in the file defines `chain_index`. A subtask without `h`/`k`
//! takes the task's `default_h`/`default_k`; missing defaults are 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{CompositeTask, TaskSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSetFile {
    pub processors: Vec<String>,
    pub tasks: Vec<TaskEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub id: String,
    pub period: f64,
    pub deadline: f64,
    #[serde(default)]
    pub default_h: f64,
    #[serde(default)]
    pub default_k: f64,
    pub chain: Vec<StageEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub processor: String,
    pub mandatory: f64,
    pub optional: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

impl From<&TaskSetFile> for TaskSet {
    fn from(file: &TaskSetFile) -> Self {
        let tasks = file
            .tasks
            .iter()
            .map(|t| {
                let stages = t.chain.iter().map(|s| {
                    (
                        s.processor.clone(),
                        s.mandatory,
                        s.optional,
                        s.h.unwrap_or(t.default_h),
                        s.k.unwrap_or(t.default_k),
                    )
                });
                CompositeTask::new(t.id.clone(), t.period, t.deadline, stages)
            })
            .collect();
        TaskSet::new(file.processors.clone(), tasks)
    }
}

impl From<&TaskSet> for TaskSetFile {
    /// Writes the static part of a task set. Per-subtask factors that equal
    /// the task's first-stage values are folded into the defaults.
    fn from(ts: &TaskSet) -> Self {
        let tasks = ts
            .tasks
            .iter()
            .map(|t| {
                let (dh, dk) = t
                    .chain
                    .first()
                    .map_or((0.0, 0.0), |s| (s.spec.mandatory_error_factor, s.spec.optional_error_factor));
                let chain = t
                    .chain
                    .iter()
                    .map(|s| StageEntry {
                        processor: s.spec.processor_id.clone(),
                        mandatory: s.spec.mandatory,
                        optional: s.spec.optional,
                        h: (s.spec.mandatory_error_factor != dh).then_some(s.spec.mandatory_error_factor),
                        k: (s.spec.optional_error_factor != dk).then_some(s.spec.optional_error_factor),
                    })
                    .collect();
                TaskEntry {
                    id: t.id.clone(),
                    period: t.period,
                    deadline: t.deadline,
                    default_h: dh,
                    default_k: dk,
                    chain,
                }
            })
            .collect();
        TaskSetFile {
            processors: ts.processors.clone(),
            tasks,
        }
    }
}

pub fn parse_task_set(json: &str) -> Result<TaskSet> {
    let file: TaskSetFile = serde_json::from_str(json)?;
    Ok(TaskSet::from(&file))
}

pub fn to_json(ts: &TaskSet) -> String {
    serde_json::to_string_pretty(&TaskSetFile::from(ts)).expect("task set file is always serializable")
}

pub fn read_task_set(path: impl AsRef<Path>) -> Result<TaskSet> {
    parse_task_set(&std::fs::read_to_string(path)?)
}

pub fn write_task_set(path: impl AsRef<Path>, ts: &TaskSet) -> Result<()> {
    std::fs::write(path, to_json(ts))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "processors": ["P1", "P2"],
        "tasks": [
            { "id": "T1", "period": 10, "deadline": 20, "default_h": 0.5, "default_k": 0.25,
              "chain": [ { "processor": "P1", "mandatory": 2, "optional": 1 },
                         { "processor": "P2", "mandatory": 3, "optional": 4, "k": 1.0 } ] },
            { "id": "T2", "period": 8, "deadline": 8,
              "chain": [ { "processor": "P2", "mandatory": 1, "optional": 0 } ] }
        ]
    }"#;

    #[test]
    fn defaults_and_overrides() {
        let ts = parse_task_set(SAMPLE).unwrap();
        let t1 = &ts.tasks[0];
        assert_eq!(t1.chain[0].spec.mandatory_error_factor, 0.5);
        assert_eq!(t1.chain[1].spec.optional_error_factor, 1.0);
        assert_eq!(t1.chain[1].spec.chain_index, 2);
        assert_eq!(ts.tasks[1].chain[0].spec.mandatory_error_factor, 0.0);
        assert_eq!(t1.virtual_deadline, 20.0);
        assert!(crate::model::validate(&ts).is_empty());
    }

    #[test]
    fn write_then_parse() {
        let ts = parse_task_set(SAMPLE).unwrap();
        let back = parse_task_set(&to_json(&ts)).unwrap();
        assert_eq!(ts, back);
    }

    #[test]
    fn malformed_json_is_an_error() {
        assert!(parse_task_set("{\"processors\": 3}").is_err());
    }
}
