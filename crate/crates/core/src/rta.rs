//! Fixed-priority busy-period response-time analysis with release jitter
//! and arbitrary deadlines, iterated holistically over task chains.
//!
//! A subtask is released when its predecessor completes, so its release
//! jitter is the worst-case response of the predecessor measured from the
//! chain activation. Subtask responses here are measured from the chain
//! activation as well; the end-to-end response is the response of the last
//! stage, which equals the sum of the per-stage increments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{CompositeTask, SubtaskKey, TaskSet};
use crate::priority::PriorityOrdering;
use crate::time::{approx_eq, ceil_tol, gt, hyperperiod, Time, EPS};

/// Divergence bound as a multiple of the largest period involved.
pub const DIVERGENCE_FACTOR: f64 = (1u64 << 20) as f64;
/// Fixed-point iteration budget per response-time computation.
pub const MAX_ITERATIONS: usize = 1_000_000;
const MAX_HOLISTIC_ROUNDS: usize = 10_000;

/// Periodic demand: execution `C`, period `P`, release jitter `J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub execution: Time,
    pub period: Time,
    pub jitter: Time,
}

impl Demand {
    pub fn new(execution: Time, period: Time, jitter: Time) -> Self {
        Demand { execution, period, jitter }
    }

    fn workload(&self, window: Time) -> Time {
        ceil_tol((window + self.jitter) / self.period) * self.execution
    }
}

/// Least fixed point of `x = f(x)` from `start`; `None` past `limit`.
fn fixed_point(start: Time, limit: Time, budget: &mut usize, f: impl Fn(Time) -> Time) -> Option<Time> {
    let mut x = start;
    loop {
        if *budget == 0 {
            return None;
        }
        *budget -= 1;
        let next = f(x);
        if !next.is_finite() || next > limit {
            return None;
        }
        if (next - x).abs() <= EPS {
            return Some(next.max(x));
        }
        x = next;
    }
}

/// Worst-case response time of `own`, measured from its arrival (so it
/// includes its release jitter), under preemption by `higher`.
///
/// Examines every instance `q` in the level-i busy period: completion
/// `w_q = (q+1) C + sum_h ceil((w_q + J_h) / P_h) C_h`, response
/// `w_q - q P + J`. Returns `None` when the demand exceeds the processor or
/// an iteration passes the divergence bound.
pub fn subtask_wcrt(own: Demand, higher: &[Demand]) -> Option<Time> {
    if !own.jitter.is_finite() || higher.iter().any(|h| !h.jitter.is_finite()) {
        return None;
    }
    let util: f64 = own.execution / own.period + higher.iter().map(|h| h.execution / h.period).sum::<f64>();
    if gt(util, 1.0) {
        return None;
    }
    let max_period = higher.iter().map(|h| h.period).fold(own.period, f64::max);
    let limit = DIVERGENCE_FACTOR * max_period;
    let start = own.execution + higher.iter().map(|h| h.execution).sum::<Time>();
    if start <= 0.0 {
        return Some(own.jitter);
    }
    busy_period_wcrt(own, higher, util, limit)
        .or_else(|| linear_bound(own, higher))
        .filter(|&r| r <= limit)
}

fn busy_period_wcrt(own: Demand, higher: &[Demand], util: f64, limit: Time) -> Option<Time> {
    let mut budget = MAX_ITERATIONS;
    let hp_demand = |w: Time| higher.iter().map(|h| h.workload(w)).sum::<Time>();
    let start = own.execution + higher.iter().map(|h| h.execution).sum::<Time>();
    let busy = if approx_eq(util, 1.0) {
        // At full load the demand meets the line only at common multiples
        // of the periods, and never once any release is jittered.
        let all = || std::iter::once(&own).chain(higher).filter(|d| d.execution > 0.0);
        if all().any(|d| d.jitter > EPS) {
            return None;
        }
        hyperperiod(all().map(|d| d.period), limit)?
    } else {
        fixed_point(start, limit, &mut budget, |l| own.workload(l) + hp_demand(l))?
    };
    let instances = (ceil_tol((busy + own.jitter) / own.period) as usize).max(1);

    let mut worst: Time = 0.0;
    let mut w = start;
    for q in 0..instances {
        let base = (q + 1) as f64 * own.execution;
        w = fixed_point(w.max(base), limit, &mut budget, |w| base + hp_demand(w))?;
        worst = worst.max(w - q as f64 * own.period + own.jitter);
    }
    Some(worst)
}

/// Closed-form bound for when the busy period cannot be enumerated.
///
/// `hp(t) <= t U_hp + sum (C_h + J_h U_h)`, so instance `q` completes by
/// `(K + (q+1) C) / (1 - U_hp)`; with total utilization at most 1 the
/// response bound does not grow with `q`, and `q = 0` gives
/// `(C + K) / (1 - U_hp) + J`.
fn linear_bound(own: Demand, higher: &[Demand]) -> Option<Time> {
    let u_hp: f64 = higher.iter().map(|h| h.execution / h.period).sum();
    if u_hp >= 1.0 - EPS {
        return None;
    }
    let k: Time = higher.iter().map(|h| h.execution + h.jitter * h.execution / h.period).sum();
    Some((own.execution + k) / (1.0 - u_hp) + own.jitter)
}

/// Response-time analysis of a whole task set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtaResult {
    /// `[task][pos]`: response from chain activation, `None` if unbounded.
    pub subtask_wcrt: Vec<Vec<Option<Time>>>,
    /// `[task]`: end-to-end response.
    pub e2e_wcrt: Vec<Option<Time>>,
    /// `[task]`: end-to-end response minus the task's own execution.
    pub blocking: Vec<Option<Time>>,
    /// Holistic rounds until the jitters stabilized.
    pub rounds: usize,
}

impl RtaResult {
    /// Task id to end-to-end response.
    pub fn per_task_e2e(&self, task_set: &TaskSet) -> BTreeMap<String, Option<Time>> {
        task_set.tasks.iter().map(|t| t.id.clone()).zip(self.e2e_wcrt.iter().copied()).collect()
    }

    /// `(task id, chain index)` to response from chain activation.
    pub fn per_subtask(&self, task_set: &TaskSet) -> BTreeMap<(String, usize), Option<Time>> {
        let mut out = BTreeMap::new();
        for (t, row) in task_set.tasks.iter().zip(&self.subtask_wcrt) {
            for (s, r) in t.chain.iter().zip(row) {
                out.insert((t.id.clone(), s.spec.chain_index), *r);
            }
        }
        out
    }

    /// Per-stage increment `R_j - R_{j-1}`; these sum to the end-to-end value.
    pub fn stage_response(&self, key: SubtaskKey) -> Option<Time> {
        let r = self.subtask_wcrt[key.task][key.pos]?;
        let prev = if key.pos == 0 { 0.0 } else { self.subtask_wcrt[key.task][key.pos - 1]? };
        Some(r - prev)
    }

    /// Whether a task meets its end-to-end deadline.
    pub fn meets_deadline(&self, task_set: &TaskSet, task: usize) -> bool {
        self.e2e_wcrt[task].is_some_and(|r| r <= task_set.tasks[task].deadline + EPS)
    }
}

/// Holistic analysis: all subtask responses recomputed with the jitters of
/// the previous round until the jitters reach a fixed point.
pub fn analyze(task_set: &TaskSet, ordering: &PriorityOrdering) -> RtaResult {
    let tasks = &task_set.tasks;
    let mut wcrt: Vec<Vec<Option<Time>>> = tasks.iter().map(|t| vec![Some(0.0); t.chain.len()]).collect();
    let global_limit = DIVERGENCE_FACTOR * tasks.iter().map(|t| t.period).fold(0.0, f64::max);

    let jitter_of = |wcrt: &Vec<Vec<Option<Time>>>, k: SubtaskKey| -> Time {
        if k.pos == 0 {
            0.0
        } else {
            wcrt[k.task][k.pos - 1].unwrap_or(f64::INFINITY)
        }
    };
    let demand_of = |wcrt: &Vec<Vec<Option<Time>>>, k: SubtaskKey| {
        let t = &tasks[k.task];
        Demand::new(t.chain[k.pos].execution(), t.period, jitter_of(wcrt, k))
    };

    let mut rounds = 0;
    let mut converged = false;
    while rounds < MAX_HOLISTIC_ROUNDS {
        rounds += 1;
        let mut next = wcrt.clone();
        for list in &ordering.per_processor {
            for (i, &k) in list.iter().enumerate() {
                let higher: Vec<Demand> = list[..i].iter().map(|&h| demand_of(&wcrt, h)).collect();
                let r = subtask_wcrt(demand_of(&wcrt, k), &higher).filter(|&r| r <= global_limit);
                next[k.task][k.pos] = r;
            }
        }
        let stable = next.iter().zip(&wcrt).all(|(a, b)| {
            a.iter().zip(b).all(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => (x - y).abs() <= EPS,
                (None, None) => true,
                _ => false,
            })
        });
        wcrt = next;
        if stable {
            converged = true;
            break;
        }
    }
    if !converged {
        // Whatever still moves is treated as diverging.
        for row in &mut wcrt {
            for r in row.iter_mut() {
                *r = None;
            }
        }
    }
    // A stage is bounded only if its whole prefix is.
    for row in &mut wcrt {
        for j in 1..row.len() {
            if row[j - 1].is_none() {
                row[j] = None;
            }
        }
    }

    let e2e: Vec<Option<Time>> = wcrt.iter().map(|row| row.last().copied().flatten()).collect();
    let blocking = tasks
        .iter()
        .zip(&e2e)
        .map(|(t, r)| r.map(|r| (r - t.total_execution()).max(0.0)))
        .collect();
    RtaResult {
        subtask_wcrt: wcrt,
        e2e_wcrt: e2e,
        blocking,
        rounds,
    }
}

/// End-to-end worst-case response of task index `task`.
pub fn end_to_end_wcrt(task: usize, task_set: &TaskSet, ordering: &PriorityOrdering) -> Option<Time> {
    analyze(task_set, ordering).e2e_wcrt.get(task).copied().flatten()
}

/// Interference suffered by a task: end-to-end response minus its own
/// assigned execution.
pub fn blocking_time(task: &CompositeTask, e2e_wcrt: Option<Time>) -> Result<Time> {
    let r = e2e_wcrt.ok_or_else(|| domain(format!("task {} has an unbounded response time", task.id)))?;
    Ok((r - task.total_execution()).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priority::{assign_priorities, Scheme};

    #[test]
    fn alone_on_processor() {
        assert_eq!(subtask_wcrt(Demand::new(2.0, 5.0, 0.0), &[]), Some(2.0));
    }

    #[test]
    fn one_higher_priority_task() {
        let hp = [Demand::new(1.0, 4.0, 0.0)];
        assert_eq!(subtask_wcrt(Demand::new(2.0, 6.0, 0.0), &hp), Some(3.0));
    }

    #[test]
    fn overloaded_interference_is_unbounded() {
        let hp = [Demand::new(5.0, 4.0, 0.0)];
        assert_eq!(subtask_wcrt(Demand::new(1.0, 10.0, 0.0), &hp), None);
    }

    #[test]
    fn arbitrary_deadline_later_instance_is_worst() {
        // Classic example: hp (26, 70), lp (62, 100), U = 0.991. The second
        // instance of lp in the busy period has the largest response.
        let hp = [Demand::new(26.0, 70.0, 0.0)];
        let r = subtask_wcrt(Demand::new(62.0, 100.0, 0.0), &hp).unwrap();
        assert_eq!(r, 118.0);
    }

    #[test]
    fn full_load() {
        let hp = [Demand::new(2.0, 4.0, 0.0)];
        assert_eq!(subtask_wcrt(Demand::new(3.0, 6.0, 0.0), &hp), Some(7.0));
        // Jittered or incommensurate full load falls back to the closed form.
        let hp = [Demand::new(2.0, 4.0, 1.0)];
        assert_eq!(subtask_wcrt(Demand::new(3.0, 6.0, 0.0), &hp), Some((3.0 + 2.0 + 0.5) / 0.5));
        let hp = [Demand::new(2.0, 4.0 * std::f64::consts::SQRT_2, 0.0)];
        let own = Demand::new(6.0 - 1.5 * std::f64::consts::SQRT_2, 6.0, 0.0);
        let r = subtask_wcrt(own, &hp).unwrap();
        assert!(r >= own.execution + 2.0 && r.is_finite());
        // Higher-priority load alone at 1 leaves nothing for the bound.
        let hp = [Demand::new(4.0, 4.0, 0.5)];
        assert_eq!(subtask_wcrt(Demand::new(0.0, 6.0, 0.0), &hp), None);
    }

    #[test]
    fn jitter_adds_to_own_response() {
        assert_eq!(subtask_wcrt(Demand::new(2.0, 10.0, 3.0), &[]), Some(5.0));
    }

    fn chain_set() -> TaskSet {
        let s = |p: &str, c: f64| (p.to_string(), c, 0.0, 0.0, 0.0);
        TaskSet::new(
            vec!["P1".into(), "P2".into()],
            vec![CompositeTask::new("A", 20.0, 20.0, [s("P1", 3.0), s("P2", 4.0)])],
        )
    }

    #[test]
    fn idle_chain_sums_executions() {
        let mut ts = chain_set();
        let ord = assign_priorities(&mut ts, Scheme::Global).unwrap();
        let res = analyze(&ts, &ord);
        assert_eq!(res.e2e_wcrt[0], Some(7.0));
        assert_eq!(res.subtask_wcrt[0], vec![Some(3.0), Some(7.0)]);
        assert_eq!(res.stage_response(SubtaskKey::new(0, 1)), Some(4.0));
        assert_eq!(blocking_time(&ts.tasks[0], res.e2e_wcrt[0]).unwrap(), 0.0);
    }

    #[test]
    fn empty_set() {
        let mut ts = TaskSet::new(vec!["P1".into()], vec![]);
        let ord = assign_priorities(&mut ts, Scheme::Global).unwrap();
        let res = analyze(&ts, &ord);
        assert!(res.e2e_wcrt.is_empty());
    }

    #[test]
    fn blocking_subtracts_execution() {
        let ts = chain_set();
        assert_eq!(blocking_time(&ts.tasks[0], Some(10.0)).unwrap(), 3.0);
        assert!(blocking_time(&ts.tasks[0], None).is_err());
    }
}
