//! Mandatory-relevance priority assignment (global and local variants) and
//! the promotion/depletion state machine used by the repair loop.
//!
//! Under the global scheme composite tasks are sorted by their priority
//! index `PI = MR / VD`, where `MR` is the share of mandatory time in the
//! task's execution and `VD` is the virtual deadline. Ties fall back to the
//! shorter end-to-end deadline, then the shorter mandatory part, then the
//! task id. Depleted tasks always come first. Subtasks inherit their parent's
//! rank. The local scheme ranks subtasks per processor using the subtask's
//! own mandatory share.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{domain, logic, Result};
use crate::model::{CompositeTask, SubtaskKey, SubtaskState, TaskSet};
use crate::time::{cmp_quantized, Time, EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Scheme {
    #[default]
    Global,
    Local,
}

/// `sum M' / sum (M' + sigma)`.
pub fn mandatory_relevance(task: &CompositeTask) -> Result<f64> {
    let total = task.total_execution();
    if total <= 0.0 {
        return Err(domain(format!("task {} has zero total execution", task.id)));
    }
    if task.is_mandatory_only() {
        return Ok(1.0);
    }
    Ok(task.total_mandatory() / total)
}

/// `MR / VD`; exactly 1 for depleted tasks.
pub fn priority_index_global(task: &CompositeTask) -> Result<f64> {
    if task.depleted {
        return Ok(1.0);
    }
    if task.virtual_deadline <= 0.0 {
        return Err(domain(format!("task {} has virtual deadline {}", task.id, task.virtual_deadline)));
    }
    Ok(mandatory_relevance(task)? / task.virtual_deadline)
}

/// `M' / ((M' + sigma) * VD)` for a single subtask.
pub fn priority_index_local(subtask: &SubtaskState, parent_vd: Time) -> Result<f64> {
    let exec = subtask.execution();
    if exec <= 0.0 {
        return Err(domain(format!(
            "subtask {}#{} has zero execution",
            subtask.spec.composite_id, subtask.spec.chain_index
        )));
    }
    if parent_vd <= 0.0 {
        return Err(domain(format!("parent virtual deadline {parent_vd}")));
    }
    Ok(subtask.extended_mandatory / (exec * parent_vd))
}

/// Result of [`assign_priorities`].
///
/// Ranks are 0-based internally (0 = highest); `CompositeTask::priority_rank`
/// holds the 1-based global rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityOrdering {
    /// Task ids, highest priority first.
    pub ranked: Vec<String>,
    pub scheme: Scheme,
    /// Per processor, subtask keys highest priority first. Populated for both
    /// schemes; under the global scheme it follows the task ranks.
    pub per_processor: Vec<Vec<SubtaskKey>>,
    task_rank: Vec<usize>,
    /// `[task][pos]` position within the subtask's processor list.
    local_rank: Vec<Vec<usize>>,
}

impl PriorityOrdering {
    /// 0-based rank of a composite task.
    pub fn task_rank(&self, task: usize) -> usize {
        self.task_rank[task]
    }

    /// Sort key of a subtask on its processor; smaller is higher priority.
    /// Only comparable among subtasks sharing a processor.
    pub fn subtask_priority(&self, key: SubtaskKey) -> (usize, usize) {
        match self.scheme {
            Scheme::Global => (self.task_rank[key.task], key.pos),
            Scheme::Local => (self.local_rank[key.task][key.pos], key.pos),
        }
    }

    /// Whether `a` has strictly higher priority than `b` on a shared processor.
    pub fn outranks(&self, a: SubtaskKey, b: SubtaskKey) -> bool {
        self.subtask_priority(a) < self.subtask_priority(b)
    }

    /// Task indices, highest priority first.
    pub fn task_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.task_rank.len()).collect();
        idx.sort_by_key(|&i| self.task_rank[i]);
        idx
    }
}

fn tie_break(a: &CompositeTask, b: &CompositeTask) -> Ordering {
    cmp_quantized(a.deadline, b.deadline)
        .then_with(|| cmp_quantized(a.total_mandatory(), b.total_mandatory()))
        .then_with(|| a.id.cmp(&b.id))
}

/// Ranks all tasks (and subtasks per processor) and writes `priority_index`
/// and `priority_rank` back into the task set.
pub fn assign_priorities(task_set: &mut TaskSet, scheme: Scheme) -> Result<PriorityOrdering> {
    for t in &mut task_set.tasks {
        t.priority_index = priority_index_global(t)?;
    }
    let tasks = &task_set.tasks;
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&tasks[i], &tasks[j]);
        b.depleted
            .cmp(&a.depleted)
            .then_with(|| cmp_quantized(b.priority_index, a.priority_index))
            .then_with(|| tie_break(a, b))
    });

    let mut task_rank = vec![0; tasks.len()];
    for (r, &i) in order.iter().enumerate() {
        task_rank[i] = r;
    }

    let mut per_processor = task_set.subtasks_by_processor();
    let mut local_rank: Vec<Vec<usize>> = tasks.iter().map(|t| vec![0; t.chain.len()]).collect();

    match scheme {
        Scheme::Global => {
            for list in &mut per_processor {
                list.sort_by_key(|k| (task_rank[k.task], k.pos));
            }
        }
        Scheme::Local => {
            let mut local_pi: Vec<Vec<f64>> = Vec::with_capacity(tasks.len());
            for t in tasks {
                let mut row = Vec::with_capacity(t.chain.len());
                for s in &t.chain {
                    row.push(if t.depleted { 1.0 } else { priority_index_local(s, t.virtual_deadline)? });
                }
                local_pi.push(row);
            }
            for list in &mut per_processor {
                list.sort_by(|x, y| {
                    let (tx, ty) = (&tasks[x.task], &tasks[y.task]);
                    let (sx, sy) = (&tx.chain[x.pos], &ty.chain[y.pos]);
                    ty.depleted
                        .cmp(&tx.depleted)
                        .then_with(|| cmp_quantized(local_pi[y.task][y.pos], local_pi[x.task][x.pos]))
                        .then_with(|| cmp_quantized(tx.deadline, ty.deadline))
                        .then_with(|| cmp_quantized(sx.extended_mandatory, sy.extended_mandatory))
                        .then_with(|| tx.id.cmp(&ty.id))
                        .then_with(|| x.pos.cmp(&y.pos))
                });
            }
        }
    }
    for list in &per_processor {
        for (r, k) in list.iter().enumerate() {
            local_rank[k.task][k.pos] = r;
        }
    }

    for (i, t) in task_set.tasks.iter_mut().enumerate() {
        t.priority_rank = task_rank[i] + 1;
    }
    Ok(PriorityOrdering {
        ranked: order.iter().map(|&i| task_set.tasks[i].id.clone()).collect(),
        scheme,
        per_processor,
        task_rank,
        local_rank,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PromotionAction {
    Recalculated,
    VdReduced(Time),
    Depleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromotionOutcome {
    pub action: PromotionAction,
    pub task_id: String,
}

/// Drops all assigned optional time of a task, propagating the discards
/// down the chain.
pub fn force_mandatory_only(task: &mut CompositeTask) {
    for pos in 0..task.chain.len() {
        let sigma = task.chain[pos].assigned_optional;
        if sigma > 0.0 {
            crate::utilization::shed_optional(task, pos, sigma).expect("position in range");
        }
    }
}

/// Raises a task's priority after the execution-reduction phase.
///
/// * reduction succeeded: nothing changes here; the reduced optional already
///   raised MR, and the caller re-sorts.
/// * reduction failed: MR is forced to 1 and VD drops by `shortage` while it
///   stays positive.
/// * MR already 1 and VD would not stay positive: the task is depleted
///   (PI = 1, VD = deadline) and can no longer be reduced or promoted.
pub fn promote(task: &mut CompositeTask, shortage: Time, execution_reduction_succeeded: bool) -> Result<PromotionOutcome> {
    if task.depleted {
        return Err(logic(format!("task {} is depleted and cannot be promoted", task.id)));
    }
    if shortage < 0.0 {
        return Err(domain(format!("negative shortage {shortage}")));
    }
    let task_id = task.id.clone();
    let outcome = |action| PromotionOutcome { action, task_id: task_id.clone() };
    if execution_reduction_succeeded {
        return Ok(outcome(PromotionAction::Recalculated));
    }
    let was_mandatory_only = task.is_mandatory_only();
    let new_vd = task.virtual_deadline - shortage;
    if new_vd > EPS {
        force_mandatory_only(task);
        task.virtual_deadline = new_vd;
        return Ok(outcome(PromotionAction::VdReduced(new_vd)));
    }
    if !was_mandatory_only {
        force_mandatory_only(task);
        return Ok(outcome(PromotionAction::Recalculated));
    }
    task.priority_index = 1.0;
    task.virtual_deadline = task.deadline;
    task.depleted = true;
    Ok(outcome(PromotionAction::Depleted))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: &str, d: f64, parts: &[(f64, f64)]) -> CompositeTask {
        CompositeTask::new(
            id,
            d,
            d,
            parts
                .iter()
                .enumerate()
                .map(|(j, &(m, o))| (format!("P{}", j + 1), m, o, 0.0, 0.0)),
        )
    }

    fn set(tasks: Vec<CompositeTask>) -> TaskSet {
        TaskSet::new(vec!["P1".into(), "P2".into()], tasks)
    }

    #[test]
    fn mandatory_relevance_examples() {
        assert_eq!(mandatory_relevance(&task("A", 10.0, &[(2.0, 1.0), (3.0, 4.0)])).unwrap(), 0.5);
        assert_eq!(mandatory_relevance(&task("A", 10.0, &[(2.0, 0.0), (3.0, 0.0)])).unwrap(), 1.0);
        assert_eq!(mandatory_relevance(&task("A", 10.0, &[(1.0, 3.0)])).unwrap(), 0.25);
        assert!(mandatory_relevance(&task("A", 10.0, &[(0.0, 0.0)])).is_err());
    }

    #[test]
    fn global_index_examples() {
        let t = task("A", 20.0, &[(2.0, 1.0), (3.0, 4.0)]);
        assert!((priority_index_global(&t).unwrap() - 0.025).abs() < 1e-15);
        let mut d = t.clone();
        d.depleted = true;
        assert_eq!(priority_index_global(&d).unwrap(), 1.0);
        let m = task("B", 4.0, &[(1.0, 0.0)]);
        assert_eq!(priority_index_global(&m).unwrap(), 0.25);
        let mut bad = m.clone();
        bad.virtual_deadline = 0.0;
        assert!(priority_index_global(&bad).is_err());
    }

    #[test]
    fn local_index_examples() {
        let t = task("A", 10.0, &[(2.0, 2.0)]);
        assert!((priority_index_local(&t.chain[0], 10.0).unwrap() - 0.05).abs() < 1e-15);
        let t = task("A", 6.0, &[(3.0, 0.0)]);
        assert!((priority_index_local(&t.chain[0], 6.0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        let t = task("A", 5.0, &[(1.0, 3.0)]);
        assert!((priority_index_local(&t.chain[0], 5.0).unwrap() - 0.05).abs() < 1e-15);
        assert!(priority_index_local(&task("Z", 5.0, &[(0.0, 0.0)]).chain[0], 5.0).is_err());
    }

    #[test]
    fn strict_pi_order() {
        // A: MR 0.5, VD 10 -> 0.05. B: MR 0.4, VD 20 -> 0.02.
        let mut ts = set(vec![task("B", 20.0, &[(2.0, 3.0)]), task("A", 10.0, &[(1.0, 1.0)])]);
        let ord = assign_priorities(&mut ts, Scheme::Global).unwrap();
        assert_eq!(ord.ranked, vec!["A", "B"]);
        assert_eq!(ts.tasks[1].priority_rank, 1);
    }

    #[test]
    fn tie_on_pi_prefers_shorter_deadline() {
        // A: MR 0.5 / 10 = 0.05; B: MR 0.6 / 12 = 0.05.
        let mut ts = set(vec![task("B", 12.0, &[(3.0, 2.0)]), task("A", 10.0, &[(1.0, 1.0)])]);
        let ord = assign_priorities(&mut ts, Scheme::Global).unwrap();
        assert_eq!(ord.ranked, vec!["A", "B"]);
    }

    #[test]
    fn tie_on_pi_and_deadline_prefers_shorter_mandatory() {
        let mut ts = set(vec![task("X", 10.0, &[(5.0, 5.0)]), task("Y", 10.0, &[(3.0, 3.0)])]);
        let ord = assign_priorities(&mut ts, Scheme::Global).unwrap();
        assert_eq!(ord.ranked, vec!["Y", "X"]);
    }

    #[test]
    fn full_tie_uses_id() {
        let mut ts = set(vec![task("b", 10.0, &[(1.0, 1.0)]), task("a", 10.0, &[(1.0, 1.0)])]);
        let ord = assign_priorities(&mut ts, Scheme::Global).unwrap();
        assert_eq!(ord.ranked, vec!["a", "b"]);
    }

    #[test]
    fn depleted_first() {
        let mut hi = task("hi", 1.0, &[(1.0, 0.0)]);
        hi.virtual_deadline = 0.5; // PI 2 > 1
        let mut dep = task("dep", 100.0, &[(1.0, 0.0)]);
        dep.depleted = true;
        dep.priority_index = 1.0;
        let mut ts = set(vec![hi, dep]);
        let ord = assign_priorities(&mut ts, Scheme::Global).unwrap();
        assert_eq!(ord.ranked, vec!["dep", "hi"]);
    }

    #[test]
    fn local_scheme_ranks_per_processor() {
        // On P1: A#1 local PI 1/(2*10)=0.05, B#1 local PI 2/(2*8)=0.125.
        let mut ts = set(vec![task("A", 10.0, &[(1.0, 1.0), (1.0, 0.0)]), task("B", 8.0, &[(2.0, 0.0)])]);
        let ord = assign_priorities(&mut ts, Scheme::Local).unwrap();
        assert_eq!(ord.per_processor[0], vec![SubtaskKey::new(1, 0), SubtaskKey::new(0, 0)]);
        assert!(ord.outranks(SubtaskKey::new(1, 0), SubtaskKey::new(0, 0)));
    }

    #[test]
    fn promote_reduces_vd_and_forces_mandatory() {
        let mut t = task("A", 20.0, &[(2.0, 1.0), (3.0, 4.0)]);
        let out = promote(&mut t, 5.0, false).unwrap();
        assert_eq!(out.action, PromotionAction::VdReduced(15.0));
        assert_eq!(t.virtual_deadline, 15.0);
        assert_eq!(mandatory_relevance(&t).unwrap(), 1.0);
    }

    #[test]
    fn promote_depletes() {
        let mut t = task("A", 30.0, &[(2.0, 0.0)]);
        t.virtual_deadline = 4.0;
        let out = promote(&mut t, 9.0, false).unwrap();
        assert_eq!(out.action, PromotionAction::Depleted);
        assert!(t.depleted);
        assert_eq!(t.priority_index, 1.0);
        assert_eq!(t.virtual_deadline, 30.0);
        assert!(promote(&mut t, 1.0, false).is_err());
    }

    #[test]
    fn promote_after_success_keeps_vd() {
        let mut t = task("A", 20.0, &[(2.0, 1.0)]);
        let out = promote(&mut t, 3.0, true).unwrap();
        assert_eq!(out.action, PromotionAction::Recalculated);
        assert_eq!(t.virtual_deadline, 20.0);
        assert_eq!(t.chain[0].assigned_optional, 1.0);
    }

    #[test]
    fn vd_reduction_strictly_raises_index() {
        let mut t = task("A", 20.0, &[(2.0, 0.0)]);
        let before = priority_index_global(&t).unwrap();
        promote(&mut t, 1.0, false).unwrap();
        assert!(priority_index_global(&t).unwrap() > before);
    }
}
