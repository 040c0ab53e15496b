//! Processor utilization and the utilization-adjustment algorithm.
//!
//! A processor fails when its utilization exceeds 1. Adjustment sheds
//! optional time on a failed processor starting from its lowest-priority
//! subtask, moving up only once a subtask has no optional left. Each shed
//! feeds input error into the successor subtask, which may push another
//! processor over 1; that processor is then adjusted in turn.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{CompositeTask, SubtaskKey, TaskSet};
use crate::priority::PriorityOrdering;
use crate::time::{gt, Time, EPS};

/// `sum (M' + sigma) / period` over the subtasks bound to `processor_id`.
pub fn processor_utilization(processor_id: &str, task_set: &TaskSet) -> Result<f64> {
    if task_set.processor_index(processor_id).is_none() {
        return Err(domain(format!("unknown processor {processor_id}")));
    }
    Ok(task_set
        .tasks
        .iter()
        .flat_map(|t| t.chain.iter().map(move |s| (t.period, s)))
        .filter(|(_, s)| s.processor() == processor_id)
        .map(|(p, s)| s.execution() / p)
        .sum())
}

/// Utilization of every processor, indexed like `task_set.processors`.
pub fn utilizations(task_set: &TaskSet) -> Vec<f64> {
    let mut u = vec![0.0; task_set.processors.len()];
    for t in &task_set.tasks {
        for s in &t.chain {
            if let Some(p) = task_set.processor_index(s.processor()) {
                u[p] += s.execution() / t.period;
            }
        }
    }
    u
}

/// Utilization with every optional part dropped (extensions as currently
/// applied are kept).
pub fn mandatory_utilizations(task_set: &TaskSet) -> Vec<f64> {
    let mut u = vec![0.0; task_set.processors.len()];
    for t in &task_set.tasks {
        for s in &t.chain {
            if let Some(p) = task_set.processor_index(s.processor()) {
                u[p] += s.extended_mandatory / t.period;
            }
        }
    }
    u
}

/// Effect of feeding discarded optional time forward along a chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Propagation {
    /// The successor at `pos` was extended.
    Extended {
        pos: usize,
        delta_mandatory: Time,
        delta_optional: Time,
    },
    /// No successor: the amount stays as error at the chain end.
    Residual { amount: Time },
}

/// Adds `discarded` input error to the successor of chain position
/// `from_index` (0-based) and re-extends it with the linear error rule
/// `M' = M + h * eps`, `O' = O + k * eps`. The successor keeps its own
/// discard, so it executes the optional extension and compensates the loss.
pub fn propagate_input_error(task: &mut CompositeTask, from_index: usize, discarded: Time) -> Result<Propagation> {
    if from_index >= task.chain.len() {
        return Err(domain(format!(
            "chain position {from_index} out of range for task {} (length {})",
            task.id,
            task.chain.len()
        )));
    }
    if discarded < 0.0 {
        return Err(domain(format!("negative discarded time {discarded}")));
    }
    let pos = from_index + 1;
    let Some(next) = task.chain.get_mut(pos) else {
        return Ok(Propagation::Residual { amount: discarded });
    };
    let (m0, o0) = (next.extended_mandatory, next.extended_optional);
    next.set_input_error(next.input_error + discarded);
    Ok(Propagation::Extended {
        pos,
        delta_mandatory: next.extended_mandatory - m0,
        delta_optional: next.extended_optional - o0,
    })
}

/// Sheds up to `amount` of assigned optional time at chain position `pos`
/// and propagates the discard. Returns the amount actually shed with the
/// propagation effect.
pub fn shed_optional(task: &mut CompositeTask, pos: usize, amount: Time) -> Result<(Time, Propagation)> {
    let Some(s) = task.chain.get_mut(pos) else {
        return Err(domain(format!("chain position {pos} out of range for task {}", task.id)));
    };
    let x = amount.max(0.0).min(s.assigned_optional);
    s.assigned_optional -= x;
    s.discarded += x;
    if s.assigned_optional < EPS {
        s.discarded = s.extended_optional;
        s.assigned_optional = 0.0;
    }
    let prop = propagate_input_error(task, pos, x)?;
    Ok((x, prop))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdjustmentOutcome {
    Fixed,
    SystemFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentResult {
    pub outcome: AdjustmentOutcome,
    /// Optional time removed per subtask, in the order it happened.
    pub touched: Vec<(SubtaskKey, Time)>,
    /// Input error applied to successors.
    pub propagated: Vec<(SubtaskKey, Time)>,
    /// Discarded time that reached a chain end, per task id.
    pub residual_errors: Vec<(String, Time)>,
    /// Subtask reduction visits.
    pub visits: usize,
    /// Processor reduction passes.
    pub passes: usize,
    pub diagnostic: Option<String>,
}

/// Brings every processor to utilization at most 1 by shedding optional
/// time, lowest priority first, following propagation-induced cascades.
pub fn adjust_utilization(task_set: &mut TaskSet, ordering: &PriorityOrdering) -> AdjustmentResult {
    let mut result = AdjustmentResult {
        outcome: AdjustmentOutcome::Fixed,
        touched: Vec::new(),
        propagated: Vec::new(),
        residual_errors: Vec::new(),
        visits: 0,
        passes: 0,
        diagnostic: None,
    };
    let n_proc = task_set.processors.len();
    let proc_of: Vec<Vec<usize>> = task_set
        .tasks
        .iter()
        .map(|t| t.chain.iter().map(|s| task_set.processor_index(s.processor()).unwrap_or(usize::MAX)).collect())
        .collect();
    let max_passes = (task_set.n_tasks() * n_proc).max(1) + n_proc;
    let mut util = utilizations(task_set);

    loop {
        // Among failed processors, the one hosting the best-ranked subtask.
        let failed = (0..n_proc)
            .filter(|&p| gt(util[p], 1.0))
            .filter_map(|p| ordering.per_processor[p].first().map(|&k| (ordering.subtask_priority(k), p)))
            .min();
        let Some((_, p)) = failed else {
            return result;
        };
        if result.passes >= max_passes {
            result.outcome = AdjustmentOutcome::SystemFailure;
            result.diagnostic = Some(format!("cascade limit of {max_passes} processor passes exceeded"));
            return result;
        }
        result.passes += 1;

        for &key in ordering.per_processor[p].iter().rev() {
            if !gt(util[p], 1.0) {
                break;
            }
            let task = &mut task_set.tasks[key.task];
            if task.chain[key.pos].assigned_optional <= 0.0 {
                continue;
            }
            let need = (util[p] - 1.0) * task.period;
            let period = task.period;
            let (x, prop) = shed_optional(task, key.pos, need).expect("key from ordering");
            result.visits += 1;
            result.touched.push((key, x));
            util[p] -= x / period;
            match prop {
                Propagation::Extended {
                    pos,
                    delta_mandatory,
                    delta_optional,
                } => {
                    result.propagated.push((SubtaskKey::new(key.task, pos), x));
                    let q = proc_of[key.task][pos];
                    if q < n_proc {
                        util[q] += (delta_mandatory + delta_optional) / period;
                    }
                }
                Propagation::Residual { amount } => {
                    result.residual_errors.push((task_set.tasks[key.task].id.clone(), amount));
                }
            }
        }
        // Refresh from scratch to keep accumulated rounding out.
        util = utilizations(task_set);
        if gt(util[p], 1.0) {
            result.outcome = AdjustmentOutcome::SystemFailure;
            result.diagnostic = Some(format!(
                "processor {} stays at utilization {:.6} with all optional parts shed",
                task_set.processors[p], util[p]
            ));
            return result;
        }
    }
}
