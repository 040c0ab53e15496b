//! Off-line schedulability analysis of fixed-priority end-to-end task chains
//! on distributed processors, with imprecise computation.
//!
//! Each composite task is a chain of subtasks bound to processors. Every
//! subtask has a mandatory part and an optional part that may be shed under
//! overload; shedding feeds input error into the next subtask, which grows
//! by the linear error factors `h` (mandatory) and `k` (optional).
//!
//! The main entry points are [`analysis::imprecise_schedulability_analysis`]
//! and its baseline [`analysis::normal_schedulability_analysis`].

pub mod analysis;
pub mod error;
pub mod format;
pub mod metrics;
pub mod model;
pub mod priority;
pub mod rta;
pub mod sim;
pub mod time;
pub mod utilization;
pub mod workload;

pub use analysis::{
    imprecise_schedulability_analysis, mandatory_only_analysis, normal_schedulability_analysis, AnalysisConfig, AnalysisOutcome, Outcome, Verdict,
};
pub use error::{Error, Result};
pub use model::{validate, AnalysisReport, CompositeTask, FailureReason, SubtaskKey, SubtaskSpec, SubtaskState, TaskSet};
pub use priority::{assign_priorities, PriorityOrdering, Scheme};
