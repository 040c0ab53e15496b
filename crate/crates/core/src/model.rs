//! Domain types shared by every module: subtasks, composite tasks, task
//! sets, analysis reports, and task-set validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::{Time, EPS};

/// Static description of one stage of a composite task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskSpec {
    pub composite_id: String,
    /// Position in the chain, starting at 1.
    pub chain_index: usize,
    pub processor_id: String,
    pub mandatory: Time,
    pub optional: Time,
    /// Extension of the mandatory part per unit of input error (h).
    pub mandatory_error_factor: f64,
    /// Extension of the optional part per unit of input error (k).
    pub optional_error_factor: f64,
}

/// Runtime state of a subtask during one analysis run.
///
/// `discarded` is the amount of extended optional this subtask sheds on its
/// own account; the next subtask in the chain receives exactly that amount as
/// input error. `assigned_optional` is always `extended_optional - discarded`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskState {
    pub spec: SubtaskSpec,
    pub input_error: Time,
    pub extended_mandatory: Time,
    pub extended_optional: Time,
    pub assigned_optional: Time,
    pub discarded: Time,
}

impl SubtaskState {
    /// Fresh state: no input error, full optional assigned.
    pub fn new(spec: SubtaskSpec) -> Self {
        let (m, o) = (spec.mandatory, spec.optional);
        SubtaskState {
            spec,
            input_error: 0.0,
            extended_mandatory: m,
            extended_optional: o,
            assigned_optional: o,
            discarded: 0.0,
        }
    }

    /// Assigned execution time `M' + sigma`.
    pub fn execution(&self) -> Time {
        self.extended_mandatory + self.assigned_optional
    }

    /// Execution with the whole extended optional part, `M' + O'`.
    pub fn full_execution(&self) -> Time {
        self.extended_mandatory + self.extended_optional
    }

    /// Sets the input error and recomputes the linear extensions. The
    /// subtask keeps its own discard, so any optional extension is executed.
    pub fn set_input_error(&mut self, input_error: Time) {
        self.input_error = input_error;
        self.extended_mandatory = self.spec.mandatory + self.spec.mandatory_error_factor * input_error;
        self.extended_optional = self.spec.optional + self.spec.optional_error_factor * input_error;
        self.discarded = self.discarded.min(self.extended_optional);
        self.assigned_optional = (self.extended_optional - self.discarded).max(0.0);
    }

    pub fn processor(&self) -> &str {
        &self.spec.processor_id
    }
}

/// A chain of subtasks released periodically with an end-to-end deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeTask {
    pub id: String,
    pub period: Time,
    pub deadline: Time,
    pub chain: Vec<SubtaskState>,
    pub virtual_deadline: Time,
    pub priority_index: f64,
    pub depleted: bool,
    /// 1 is the highest priority; 0 means not yet assigned.
    pub priority_rank: usize,
}

impl CompositeTask {
    /// Builds a task from per-stage `(processor, mandatory, optional, h, k)`.
    pub fn new(
        id: impl Into<String>,
        period: Time,
        deadline: Time,
        stages: impl IntoIterator<Item = (String, Time, Time, f64, f64)>,
    ) -> Self {
        let id = id.into();
        let chain = stages
            .into_iter()
            .enumerate()
            .map(|(j, (processor_id, mandatory, optional, h, k))| {
                SubtaskState::new(SubtaskSpec {
                    composite_id: id.clone(),
                    chain_index: j + 1,
                    processor_id,
                    mandatory,
                    optional,
                    mandatory_error_factor: h,
                    optional_error_factor: k,
                })
            })
            .collect();
        CompositeTask {
            id,
            period,
            deadline,
            chain,
            virtual_deadline: deadline,
            priority_index: 0.0,
            depleted: false,
            priority_rank: 0,
        }
    }

    /// `sum_j M'_j`.
    pub fn total_mandatory(&self) -> Time {
        self.chain.iter().map(|s| s.extended_mandatory).sum()
    }

    /// `sum_j (M'_j + sigma_j)`: the execution the task is currently assigned.
    pub fn total_execution(&self) -> Time {
        self.chain.iter().map(SubtaskState::execution).sum()
    }

    /// Discarded time at the end of the chain that no successor compensates.
    pub fn residual_error(&self) -> Time {
        self.chain.last().map_or(0.0, |s| s.discarded)
    }

    /// Normalized chain-end error in `[0, 1]`.
    pub fn final_error(&self) -> f64 {
        let Some(last) = self.chain.last() else {
            return 0.0;
        };
        let residual = last.discarded;
        if residual <= EPS {
            return 0.0;
        }
        if last.extended_optional <= EPS {
            return 0.0;
        }
        (residual / last.extended_optional).clamp(0.0, 1.0)
    }

    /// Drops every reduction and extension and restores the deadline-based
    /// priority state.
    pub fn reset(&mut self) {
        for s in &mut self.chain {
            *s = SubtaskState::new(s.spec.clone());
        }
        self.virtual_deadline = self.deadline;
        self.priority_index = 0.0;
        self.depleted = false;
        self.priority_rank = 0;
    }

    /// Whether every subtask runs mandatory time only.
    pub fn is_mandatory_only(&self) -> bool {
        self.chain.iter().all(|s| s.assigned_optional <= EPS)
    }
}

/// Reference to a subtask by position: task index in the set and 0-based
/// chain position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubtaskKey {
    pub task: usize,
    pub pos: usize,
}

impl SubtaskKey {
    pub fn new(task: usize, pos: usize) -> Self {
        SubtaskKey { task, pos }
    }
}

/// All composite tasks plus the processor topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub processors: Vec<String>,
    pub tasks: Vec<CompositeTask>,
}

impl TaskSet {
    pub fn new(processors: Vec<String>, tasks: Vec<CompositeTask>) -> Self {
        TaskSet { processors, tasks }
    }

    /// N: number of composite tasks.
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// M: longest chain.
    pub fn max_chain_length(&self) -> usize {
        self.tasks.iter().map(|t| t.chain.len()).max().unwrap_or(0)
    }

    /// P: number of processors.
    pub fn n_processors(&self) -> usize {
        self.processors.len()
    }

    pub fn processor_index(&self, id: &str) -> Option<usize> {
        self.processors.iter().position(|p| p == id)
    }

    pub fn task_index(&self, id: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.id == id)
    }

    pub fn subtask(&self, key: SubtaskKey) -> &SubtaskState {
        &self.tasks[key.task].chain[key.pos]
    }

    /// Subtask keys grouped by processor index, in task then chain order.
    /// Subtasks bound to unknown processors are skipped.
    pub fn subtasks_by_processor(&self) -> Vec<Vec<SubtaskKey>> {
        let mut out = vec![Vec::new(); self.processors.len()];
        for (ti, task) in self.tasks.iter().enumerate() {
            for (pos, s) in task.chain.iter().enumerate() {
                if let Some(p) = self.processor_index(s.processor()) {
                    out[p].push(SubtaskKey::new(ti, pos));
                }
            }
        }
        out
    }

    /// Restores every task to its unreduced, unpromoted state.
    pub fn reset(&mut self) {
        for t in &mut self.tasks {
            t.reset();
        }
    }

    /// Multiplies every mandatory and optional time by `factor`.
    pub fn scale_execution(&mut self, factor: f64) {
        for t in &mut self.tasks {
            for s in &mut t.chain {
                s.spec.mandatory *= factor;
                s.spec.optional *= factor;
            }
        }
        self.reset();
    }
}

/// One broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Offending entity, e.g. `task T1` or `subtask T1#2`.
    pub entity: String,
    pub rule: Rule,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    ChainGap,
    NegativeTime,
    NonPositivePeriod,
    NonPositiveDeadline,
    EmptyTask,
    DuplicateTaskId,
    DuplicateSubtask,
    UnknownProcessor,
    DuplicateProcessor,
    ForeignSubtask,
    NegativeErrorFactor,
    ExtensionState,
    AssignmentState,
    FirstInputError,
    VirtualDeadline,
    DepletedState,
    NonFinite,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::ChainGap => "chain gap",
            Rule::NegativeTime => "negative time",
            Rule::NonPositivePeriod => "non-positive period",
            Rule::NonPositiveDeadline => "non-positive deadline",
            Rule::EmptyTask => "empty task",
            Rule::DuplicateTaskId => "duplicate task id",
            Rule::DuplicateSubtask => "duplicate subtask",
            Rule::UnknownProcessor => "unknown processor",
            Rule::DuplicateProcessor => "duplicate processor",
            Rule::ForeignSubtask => "foreign subtask",
            Rule::NegativeErrorFactor => "negative error factor",
            Rule::ExtensionState => "extension state",
            Rule::AssignmentState => "assignment state",
            Rule::FirstInputError => "first input error",
            Rule::VirtualDeadline => "virtual deadline",
            Rule::DepletedState => "depleted state",
            Rule::NonFinite => "non-finite value",
        };
        f.write_str(s)
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.entity, self.rule, self.detail)
    }
}

/// Checks every structural invariant of a task set. Returns an empty list
/// iff the set is well formed.
pub fn validate(task_set: &TaskSet) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |entity: String, rule: Rule, detail: String| out.push(Violation { entity, rule, detail });

    let mut procs = BTreeSet::new();
    for p in &task_set.processors {
        if !procs.insert(p.as_str()) {
            push(format!("processor {p}"), Rule::DuplicateProcessor, "listed twice".into());
        }
    }

    let mut ids = BTreeSet::new();
    let mut keys = BTreeSet::new();
    for task in &task_set.tasks {
        let tname = format!("task {}", task.id);
        if !ids.insert(task.id.as_str()) {
            push(tname.clone(), Rule::DuplicateTaskId, "task id not unique".into());
        }
        for (what, v) in [("period", task.period), ("deadline", task.deadline), ("virtual deadline", task.virtual_deadline)] {
            if !v.is_finite() {
                push(tname.clone(), Rule::NonFinite, format!("{what} is {v}"));
            }
        }
        if !(task.period > 0.0) {
            push(tname.clone(), Rule::NonPositivePeriod, format!("period {}", task.period));
        }
        if !(task.deadline > 0.0) {
            push(tname.clone(), Rule::NonPositiveDeadline, format!("deadline {}", task.deadline));
        }
        if task.chain.is_empty() {
            push(tname.clone(), Rule::EmptyTask, "chain has no subtasks".into());
        } else if task.chain.iter().all(|s| s.spec.mandatory + s.spec.optional <= 0.0) {
            push(tname.clone(), Rule::EmptyTask, "no subtask has positive execution".into());
        }
        if task.virtual_deadline <= 0.0 || task.virtual_deadline > task.deadline + EPS {
            push(
                tname.clone(),
                Rule::VirtualDeadline,
                format!("virtual deadline {} outside (0, {}]", task.virtual_deadline, task.deadline),
            );
        }
        if task.depleted && ((task.priority_index - 1.0).abs() > EPS || (task.virtual_deadline - task.deadline).abs() > EPS) {
            push(tname.clone(), Rule::DepletedState, "depleted task must have PI 1 and VD = deadline".into());
        }

        let mut indices: Vec<usize> = task.chain.iter().map(|s| s.spec.chain_index).collect();
        indices.sort_unstable();
        let expected: Vec<usize> = (1..=task.chain.len()).collect();
        if indices != expected {
            push(tname.clone(), Rule::ChainGap, format!("chain indices {indices:?}, expected 1..={}", task.chain.len()));
        }

        for (pos, s) in task.chain.iter().enumerate() {
            let sname = format!("subtask {}#{}", task.id, s.spec.chain_index);
            if s.spec.composite_id != task.id {
                push(sname.clone(), Rule::ForeignSubtask, format!("belongs to {}", s.spec.composite_id));
            }
            if !keys.insert((s.spec.composite_id.clone(), s.spec.chain_index)) {
                push(sname.clone(), Rule::DuplicateSubtask, "(composite_id, chain_index) not unique".into());
            }
            if !procs.contains(s.spec.processor_id.as_str()) {
                push(sname.clone(), Rule::UnknownProcessor, format!("processor {}", s.spec.processor_id));
            }
            let values = [
                ("mandatory", s.spec.mandatory),
                ("optional", s.spec.optional),
                ("h", s.spec.mandatory_error_factor),
                ("k", s.spec.optional_error_factor),
                ("input error", s.input_error),
                ("assigned optional", s.assigned_optional),
            ];
            for (what, v) in values {
                if !v.is_finite() {
                    push(sname.clone(), Rule::NonFinite, format!("{what} is {v}"));
                }
            }
            for (what, v) in [("mandatory", s.spec.mandatory), ("optional", s.spec.optional), ("input error", s.input_error)] {
                if v < 0.0 {
                    push(sname.clone(), Rule::NegativeTime, format!("{what} = {v}"));
                }
            }
            for (what, v) in [("h", s.spec.mandatory_error_factor), ("k", s.spec.optional_error_factor)] {
                if v < 0.0 {
                    push(sname.clone(), Rule::NegativeErrorFactor, format!("{what} = {v}"));
                }
            }
            if s.extended_mandatory < s.spec.mandatory - EPS || s.extended_optional < s.spec.optional - EPS {
                push(sname.clone(), Rule::ExtensionState, "extended part below its base value".into());
            }
            if s.assigned_optional < -EPS
                || s.assigned_optional > s.extended_optional + EPS
                || (s.discarded - (s.extended_optional - s.assigned_optional)).abs() > EPS
            {
                push(sname.clone(), Rule::AssignmentState, "assigned optional outside [0, O'] or discard mismatch".into());
            }
            if pos == 0 && s.input_error.abs() > EPS {
                push(sname.clone(), Rule::FirstInputError, format!("first subtask has input error {}", s.input_error));
            }
        }
    }
    out
}

/// Why an analysis declared the task set unschedulable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    /// Some processor stays above utilization 1 with every optional part shed.
    ProcessorOverload,
    /// Deadline misses remain and no task can be reduced or promoted further.
    ResourcesExhausted,
    /// Unreduced configuration misses a deadline (normal framework only).
    DeadlineMiss,
    /// The repair loop hit its safety cap.
    IterationLimit,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportVerdict {
    Success,
    Failure(FailureReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    /// `None` when the analysis diverged.
    pub end_to_end_wcrt: Option<Time>,
    pub schedulable: bool,
    pub shortage: Time,
    pub final_error: f64,
}

/// Per-task and per-processor outcome of an analysis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub per_task: BTreeMap<String, TaskReport>,
    pub per_processor: BTreeMap<String, f64>,
    pub verdict: ReportVerdict,
}
