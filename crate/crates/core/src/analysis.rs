//! Imprecise schedulability analysis.
//!
//! The repair loop alternates between fixing overloaded processors,
//! analysing end-to-end response times under the mandatory-relevance
//! priority order, and repairing the highest-priority task that misses its
//! deadline. A repair first sheds optional time of the task itself so that
//! its execution fits `deadline - blocking`; if that is not enough the task
//! is promoted (virtual deadline cut by the remaining shortage) and finally
//! depleted, which pins it at the top of the priority order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{logic, Result};
use crate::model::{AnalysisReport, CompositeTask, FailureReason, ReportVerdict, TaskReport, TaskSet};
use crate::priority::{assign_priorities, force_mandatory_only, promote, PriorityOrdering, PromotionAction, Scheme};
use crate::rta::{analyze, blocking_time, RtaResult};
use crate::time::{gt, Time, EPS};
use crate::utilization::{adjust_utilization, shed_optional, utilizations, AdjustmentOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReductionStatus {
    Met,
    Shortage(Time),
}

/// Which of the three reduction outcomes applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReductionCase {
    /// Even the leanest configuration exceeds the budget; the task now runs
    /// mandatory parts only.
    MandatoryOnly,
    /// Optional time was redistributed to fit the budget.
    Redistributed,
    /// The redistribution overloaded a processor; all but the last subtask
    /// run mandatory only and the last keeps what optional fits.
    LastKeepsOptional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionResult {
    pub status: ReductionStatus,
    pub case: ReductionCase,
    /// Assigned optional per chain position after the reduction.
    pub new_assignments: Vec<Time>,
    pub caused_processor_failures: Vec<String>,
}

/// `deadline - blocking`, the execution budget handed to the reduction.
/// May be negative.
pub fn effective_deadline(task: &CompositeTask, e2e_wcrt: Option<Time>) -> Result<Time> {
    Ok(task.deadline - blocking_time(task, e2e_wcrt)?)
}

fn excess(task: &CompositeTask, budget: Time) -> Time {
    task.total_execution() - budget
}

/// Sheds `amount` at `pos` and then sheds, at every later stage, exactly the
/// optional extension that the discard produced there.
fn shed_through_chain_end(task: &mut CompositeTask, pos: usize, amount: Time) {
    let mut carry = amount;
    for j in pos..task.chain.len() {
        if carry <= 0.0 {
            break;
        }
        let (x, _) = shed_optional(task, j, carry).expect("position in range");
        carry = match task.chain.get(j + 1) {
            Some(next) => next.spec.optional_error_factor * x,
            None => 0.0,
        };
    }
}

/// Greedy redistribution of a chain's optional parts so that its execution
/// fits `budget` with the least chain-end discard. Only ever sheds more.
///
/// Stages:
/// 1. Upstream cuts the successor can absorb. Shedding one unit at `j`
///    costs the successor `h + k` units, so the net gain is `1 - h - k`;
///    positive-gain positions are cut, best gain first.
/// 2. The last subtask's own optional, one unit of error per unit saved.
/// 3. Upstream cuts whose optional extension is shed all the way down the
///    chain. Each unit saves `1 - h' - k' h'' - k' k'' h''' - ...` and adds
///    `k' k'' ...` to the chain-end error; cheapest error per saving first.
///
/// What still does not fit falls back to mandatory-only.
pub fn reduce_chain(task: &mut CompositeTask, budget: Time) -> ReductionStatus {
    let n = task.chain.len();
    if n == 0 {
        return if budget >= -EPS { ReductionStatus::Met } else { ReductionStatus::Shortage(-budget) };
    }
    let factors: Vec<(f64, f64)> = (0..n).map(|j| task_factor(task, j)).collect();
    let h = |j: usize| factors[j].0;
    let k = |j: usize| factors[j].1;

    // Stage 1.
    let mut absorbable: Vec<(f64, usize)> = (0..n - 1)
        .map(|j| (1.0 - h(j + 1) - k(j + 1), j))
        .filter(|&(g, _)| g > EPS)
        .collect();
    absorbable.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for _ in 0..n {
        let mut progress = false;
        for &(gain, j) in &absorbable {
            let need = excess(task, budget);
            if need <= EPS {
                break;
            }
            let sigma = task.chain[j].assigned_optional;
            if sigma > EPS {
                shed_optional(task, j, sigma.min(need / gain)).expect("position in range");
                progress = true;
            }
        }
        if !progress || excess(task, budget) <= EPS {
            break;
        }
    }

    // Stage 2.
    let need = excess(task, budget);
    if need > EPS {
        let sigma = task.chain[n - 1].assigned_optional;
        shed_optional(task, n - 1, sigma.min(need)).expect("position in range");
    }

    // Stage 3.
    if excess(task, budget) > EPS {
        let mut raising: Vec<(f64, f64, usize)> = (0..n - 1)
            .filter_map(|j| {
                let mut saving = 1.0;
                let mut carry = 1.0;
                for l in j + 1..n {
                    saving -= carry * h(l);
                    carry *= k(l);
                }
                (saving > EPS).then_some((carry / saving, saving, j))
            })
            .collect();
        raising.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.2.cmp(&a.2)));
        for &(_, saving, j) in &raising {
            let need = excess(task, budget);
            if need <= EPS {
                break;
            }
            let sigma = task.chain[j].assigned_optional;
            if sigma > EPS {
                shed_through_chain_end(task, j, sigma.min(need / saving));
            }
        }
    }

    if excess(task, budget) <= EPS {
        return ReductionStatus::Met;
    }
    force_mandatory_only(task);
    let short = excess(task, budget);
    if short <= EPS {
        ReductionStatus::Met
    } else {
        ReductionStatus::Shortage(short)
    }
}

fn task_factor(task: &CompositeTask, pos: usize) -> (f64, f64) {
    let s = &task.chain[pos].spec;
    (s.mandatory_error_factor, s.optional_error_factor)
}

/// Execution-time reduction for task `task_idx` against `budget`, including
/// the check for processors the redistribution overloads.
pub fn reduce_execution_time(task_set: &mut TaskSet, task_idx: usize, budget: Time) -> Result<ReductionResult> {
    if task_set.tasks[task_idx].depleted {
        return Err(logic(format!("task {} is depleted and cannot be reduced", task_set.tasks[task_idx].id)));
    }
    let util_before = utilizations(task_set);
    let original = task_set.tasks[task_idx].clone();
    let own_procs: Vec<usize> = original
        .chain
        .iter()
        .filter_map(|s| task_set.processor_index(s.processor()))
        .collect();

    let mut status = reduce_chain(&mut task_set.tasks[task_idx], budget);
    let mut case = match status {
        ReductionStatus::Met => ReductionCase::Redistributed,
        ReductionStatus::Shortage(_) => ReductionCase::MandatoryOnly,
    };
    let mut caused = Vec::new();

    if case == ReductionCase::Redistributed {
        let util_after = utilizations(task_set);
        let newly_failed = own_procs.iter().any(|&p| gt(util_after[p], 1.0) && !gt(util_before[p], 1.0));
        if newly_failed {
            let task = &mut task_set.tasks[task_idx];
            *task = original;
            let n = task.chain.len();
            for pos in 0..n - 1 {
                let sigma = task.chain[pos].assigned_optional;
                shed_optional(task, pos, sigma).expect("position in range");
            }
            let keep = task.chain[n - 1]
                .extended_optional
                .min((budget - task.total_mandatory()).max(0.0))
                .min(task.chain[n - 1].assigned_optional);
            let sigma = task.chain[n - 1].assigned_optional;
            shed_optional(task, n - 1, sigma - keep).expect("position in range");
            let over = excess(task, budget);
            status = if over <= EPS { ReductionStatus::Met } else { ReductionStatus::Shortage(over) };
            case = ReductionCase::LastKeepsOptional;
            let util_now = utilizations(task_set);
            let mut seen = Vec::new();
            for &p in &own_procs {
                if gt(util_now[p], 1.0) && !seen.contains(&p) {
                    seen.push(p);
                    caused.push(task_set.processors[p].clone());
                }
            }
        }
    }

    Ok(ReductionResult {
        status,
        case,
        new_assignments: task_set.tasks[task_idx].chain.iter().map(|s| s.assigned_optional).collect(),
        caused_processor_failures: caused,
    })
}

/// Chain-end error of a task, normalized by the last subtask's extended
/// optional part.
pub fn final_error(task: &CompositeTask) -> f64 {
    task.final_error()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Schedulable,
    Unschedulable(FailureReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub iterations: usize,
    pub final_errors: BTreeMap<String, f64>,
}

impl Verdict {
    pub fn is_schedulable(&self) -> bool {
        self.outcome == Outcome::Schedulable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoopStats {
    pub iterations: usize,
    /// Summed over all adjustment calls.
    pub adjust_visits: usize,
    /// Largest visit count of a single adjustment call.
    pub max_adjust_visits: usize,
    pub adjust_passes: usize,
    pub reductions: usize,
    pub promotions: usize,
    pub depletions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub scheme: Scheme,
    /// Safety cap on repair iterations; `None` picks one from the set size.
    pub max_iterations: Option<usize>,
}

/// Everything an analysis run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub verdict: Verdict,
    pub report: AnalysisReport,
    /// Final configuration (assignments, extensions, priority state).
    pub configuration: TaskSet,
    pub stats: LoopStats,
}

fn default_iteration_cap(ts: &TaskSet) -> usize {
    64 * ts.n_tasks().max(1) * (ts.max_chain_length() + ts.n_processors()).max(1) + 64
}

fn build_outcome(work: TaskSet, ordering: &PriorityOrdering, outcome: Outcome, shortages: &[Time], stats: LoopStats) -> AnalysisOutcome {
    let rta = analyze(&work, ordering);
    build_outcome_with(work, &rta, outcome, shortages, stats)
}

fn build_outcome_with(work: TaskSet, rta: &RtaResult, outcome: Outcome, shortages: &[Time], stats: LoopStats) -> AnalysisOutcome {
    let util = utilizations(&work);
    let per_task = work
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            (
                t.id.clone(),
                TaskReport {
                    end_to_end_wcrt: rta.e2e_wcrt[i],
                    schedulable: rta.meets_deadline(&work, i),
                    shortage: shortages.get(i).copied().unwrap_or(0.0),
                    final_error: t.final_error(),
                },
            )
        })
        .collect();
    let per_processor = work.processors.iter().cloned().zip(util).collect();
    let verdict = match outcome {
        Outcome::Schedulable => ReportVerdict::Success,
        Outcome::Unschedulable(r) => ReportVerdict::Failure(r),
    };
    let final_errors = work.tasks.iter().map(|t| (t.id.clone(), t.final_error())).collect();
    AnalysisOutcome {
        verdict: Verdict {
            outcome,
            iterations: stats.iterations,
            final_errors,
        },
        report: AnalysisReport {
            per_task,
            per_processor,
            verdict,
        },
        configuration: work,
        stats,
    }
}

/// Baseline: full execution times, one analysis pass. Fails on any
/// processor above utilization 1 or any missed deadline.
pub fn normal_schedulability_analysis(task_set: &TaskSet) -> Result<AnalysisOutcome> {
    let mut work = task_set.clone();
    work.reset();
    one_pass(work)
}

/// Every task reduced to its mandatory parts (with the input-error
/// extensions that causes), one analysis pass.
pub fn mandatory_only_analysis(task_set: &TaskSet) -> Result<AnalysisOutcome> {
    let mut work = task_set.clone();
    work.reset();
    for t in &mut work.tasks {
        force_mandatory_only(t);
    }
    one_pass(work)
}

fn one_pass(mut work: TaskSet) -> Result<AnalysisOutcome> {
    let ord = assign_priorities(&mut work, Scheme::Global)?;
    let rta = analyze(&work, &ord);
    let overloaded = utilizations(&work).iter().any(|&u| gt(u, 1.0));
    let missed = (0..work.tasks.len()).any(|i| !rta.meets_deadline(&work, i));
    let outcome = if overloaded {
        Outcome::Unschedulable(FailureReason::ProcessorOverload)
    } else if missed {
        Outcome::Unschedulable(FailureReason::DeadlineMiss)
    } else {
        Outcome::Schedulable
    };
    let stats = LoopStats {
        iterations: 1,
        ..LoopStats::default()
    };
    let shortages = vec![0.0; work.tasks.len()];
    Ok(build_outcome_with(work, &rta, outcome, &shortages, stats))
}

/// The iterative imprecise schedulability analysis.
pub fn imprecise_schedulability_analysis(task_set: &TaskSet, config: &AnalysisConfig) -> Result<AnalysisOutcome> {
    let mut work = task_set.clone();
    work.reset();
    let scheme = config.scheme;
    let cap = config.max_iterations.unwrap_or_else(|| default_iteration_cap(&work));
    let mut shortages = vec![0.0; work.tasks.len()];
    let mut stats = LoopStats::default();

    loop {
        let ord = assign_priorities(&mut work, scheme)?;
        if stats.iterations >= cap {
            return Ok(build_outcome(work, &ord, Outcome::Unschedulable(FailureReason::IterationLimit), &shortages, stats));
        }
        stats.iterations += 1;

        let adj = adjust_utilization(&mut work, &ord);
        stats.adjust_visits += adj.visits;
        stats.max_adjust_visits = stats.max_adjust_visits.max(adj.visits);
        stats.adjust_passes += adj.passes;
        let ord = if adj.touched.is_empty() { ord } else { assign_priorities(&mut work, scheme)? };
        if adj.outcome == AdjustmentOutcome::SystemFailure {
            return Ok(build_outcome(work, &ord, Outcome::Unschedulable(FailureReason::ProcessorOverload), &shortages, stats));
        }

        let rta = analyze(&work, &ord);
        let missing: Vec<usize> = ord.task_order().into_iter().filter(|&i| !rta.meets_deadline(&work, i)).collect();
        let Some(&target) = missing.first() else {
            return Ok(build_outcome_with(work, &rta, Outcome::Schedulable, &shortages, stats));
        };
        if work.tasks.iter().all(|t| t.depleted) || work.tasks[target].depleted {
            return Ok(build_outcome_with(work, &rta, Outcome::Unschedulable(FailureReason::ResourcesExhausted), &shortages, stats));
        }

        let budget = match rta.e2e_wcrt[target] {
            Some(_) => effective_deadline(&work.tasks[target], rta.e2e_wcrt[target])?,
            None => 0.0,
        };
        let before: Vec<Time> = work.tasks[target].chain.iter().map(|s| s.assigned_optional).collect();
        let red = reduce_execution_time(&mut work, target, budget)?;
        stats.reductions += 1;
        let (shortage, met) = match red.status {
            ReductionStatus::Met => (0.0, true),
            ReductionStatus::Shortage(s) => (s, false),
        };
        shortages[target] = shortage;

        let mut out = promote(&mut work.tasks[target], shortage, met)?;
        stats.promotions += 1;
        let unchanged = work.tasks[target]
            .chain
            .iter()
            .zip(&before)
            .all(|(s, b)| (s.assigned_optional - b).abs() <= EPS);
        // With the assignment untouched, the next pass would reproduce this
        // one exactly until the promotion moves the task in the order.
        while unchanged && matches!(out.action, PromotionAction::VdReduced(_)) {
            let mut probe = work.clone();
            let next = assign_priorities(&mut probe, scheme)?;
            if next.ranked != ord.ranked {
                break;
            }
            out = promote(&mut work.tasks[target], shortage, false)?;
            stats.promotions += 1;
        }
        if out.action == PromotionAction::Depleted {
            stats.depletions += 1;
        }
    }
}
