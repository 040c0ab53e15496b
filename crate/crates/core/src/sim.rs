//! Discrete-event simulation of preemptive fixed-priority execution of task
//! chains, used to check the response-time analysis from below.
//!
//! All tasks are activated at time 0 and periodically afterwards. Stage
//! `j + 1` of an activation becomes ready on its processor when stage `j`
//! completes. Time advances from event to event (releases and completions).

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{SubtaskKey, TaskSet};
use crate::priority::PriorityOrdering;
use crate::time::{as_integer, Time, EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub task: String,
    pub index: usize,
    pub activation: Time,
    pub completion: Option<Time>,
    pub missed: bool,
}

impl ActivationRecord {
    pub fn response(&self) -> Option<Time> {
        self.completion.map(|c| c - self.activation)
    }
}

/// One contiguous execution interval on a processor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub processor: usize,
    pub task: usize,
    pub pos: usize,
    pub activation: usize,
    pub start: Time,
    pub end: Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub horizon: Time,
    /// `(task id, chain index)` to the largest completion time measured from
    /// the chain activation.
    pub per_subtask_max_response: BTreeMap<(String, usize), Time>,
    pub per_task_max_e2e_response: BTreeMap<String, Time>,
    /// `(task id, activation index)`.
    pub deadline_misses: Vec<(String, usize)>,
    pub activations: Vec<ActivationRecord>,
    /// Filled only when requested through [`SimOptions`].
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    pub record_segments: bool,
}

#[derive(Debug, Clone)]
struct Job {
    key: SubtaskKey,
    activation: usize,
    remaining: Time,
}

/// `3 * lcm(periods)` when all periods are integral and the lcm is at most
/// 1e7, otherwise `1e5 * max period`.
pub fn default_horizon(task_set: &TaskSet) -> Time {
    const LCM_CAP: u64 = 10_000_000;
    let max_period = task_set.tasks.iter().map(|t| t.period).fold(0.0, f64::max);
    let mut lcm: u64 = 1;
    for t in &task_set.tasks {
        let Some(p) = as_integer(t.period) else {
            return 1e5 * max_period;
        };
        let g = gcd(lcm, p);
        match (lcm / g).checked_mul(p) {
            Some(l) if l <= LCM_CAP => lcm = l,
            _ => return 1e5 * max_period,
        }
    }
    3.0 * lcm as f64
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn simulate(task_set: &TaskSet, ordering: &PriorityOrdering, horizon: Time) -> Result<SimTrace> {
    simulate_with(task_set, ordering, horizon, SimOptions::default())
}

pub fn simulate_with(task_set: &TaskSet, ordering: &PriorityOrdering, horizon: Time, opts: SimOptions) -> Result<SimTrace> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(domain(format!("simulation horizon must be positive, got {horizon}")));
    }
    let tasks = &task_set.tasks;
    let n_proc = task_set.processors.len();
    let proc_of: Vec<Vec<usize>> = tasks
        .iter()
        .map(|t| {
            t.chain
                .iter()
                .map(|s| task_set.processor_index(s.processor()).ok_or_else(|| domain(format!("unknown processor {}", s.processor()))))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let mut ready: Vec<Vec<Job>> = vec![Vec::new(); n_proc];
    let mut next_release: Vec<usize> = vec![0; tasks.len()];
    let mut records: Vec<Vec<ActivationRecord>> = vec![Vec::new(); tasks.len()];
    let mut sub_max: Vec<Vec<Option<Time>>> = tasks.iter().map(|t| vec![None; t.chain.len()]).collect();
    let mut segments = Vec::new();
    let mut now: Time = 0.0;

    let release_time = |t: usize, k: usize| k as f64 * tasks[t].period;
    let job_order = |j: &Job| (ordering.subtask_priority(j.key), j.activation);

    loop {
        // Releases due now.
        for (t, task) in tasks.iter().enumerate() {
            while release_time(t, next_release[t]) <= now + EPS && release_time(t, next_release[t]) < horizon - EPS {
                let k = next_release[t];
                records[t].push(ActivationRecord {
                    task: task.id.clone(),
                    index: k,
                    activation: release_time(t, k),
                    completion: None,
                    missed: false,
                });
                ready[proc_of[t][0]].push(Job {
                    key: SubtaskKey::new(t, 0),
                    activation: k,
                    remaining: task.chain[0].execution(),
                });
                next_release[t] += 1;
            }
        }

        // Completions, including zero-length stages released by them.
        loop {
            let mut done = Vec::new();
            for list in &mut ready {
                let mut i = 0;
                while i < list.len() {
                    if list[i].remaining <= EPS {
                        done.push(list.swap_remove(i));
                    } else {
                        i += 1;
                    }
                }
            }
            if done.is_empty() {
                break;
            }
            done.sort_by(|a, b| (a.key, a.activation).cmp(&(b.key, b.activation)));
            for job in done {
                let (t, pos) = (job.key.task, job.key.pos);
                let rec = &mut records[t][job.activation];
                let resp = now - rec.activation;
                let slot = &mut sub_max[t][pos];
                *slot = Some(slot.map_or(resp, |m: Time| m.max(resp)));
                if pos + 1 == tasks[t].chain.len() {
                    rec.completion = Some(now);
                    rec.missed = resp > tasks[t].deadline + EPS;
                } else {
                    ready[proc_of[t][pos + 1]].push(Job {
                        key: SubtaskKey::new(t, pos + 1),
                        activation: job.activation,
                        remaining: tasks[t].chain[pos + 1].execution(),
                    });
                }
            }
        }

        // Dispatch and find the next event.
        let running: Vec<Option<usize>> = ready
            .iter()
            .map(|list| (0..list.len()).min_by_key(|&i| job_order(&list[i])))
            .collect();
        let mut next = f64::INFINITY;
        for (t, &k) in next_release.iter().enumerate() {
            let r = release_time(t, k);
            if r < horizon - EPS {
                next = next.min(r);
            }
        }
        for (p, run) in running.iter().enumerate() {
            if let Some(i) = *run {
                next = next.min(now + ready[p][i].remaining);
            }
        }
        if !next.is_finite() {
            break;
        }
        let stop = next >= horizon - EPS;
        let until = next.min(horizon);
        let dt = until - now;
        for (p, run) in running.iter().enumerate() {
            if let Some(i) = *run {
                let job = &mut ready[p][i];
                job.remaining -= dt;
                if opts.record_segments && dt > 0.0 {
                    let merged = segments.last_mut().is_some_and(|s: &mut Segment| {
                        let same = s.processor == p && s.task == job.key.task && s.pos == job.key.pos && s.activation == job.activation && (s.end - now).abs() <= EPS;
                        if same {
                            s.end = until;
                        }
                        same
                    });
                    if !merged {
                        segments.push(Segment {
                            processor: p,
                            task: job.key.task,
                            pos: job.key.pos,
                            activation: job.activation,
                            start: now,
                            end: until,
                        });
                    }
                }
            }
        }
        now = until;
        if stop {
            // Let jobs finishing exactly at the horizon complete.
            if ready.iter().flatten().any(|j| j.remaining <= EPS) {
                continue;
            }
            break;
        }
    }

    let mut trace = SimTrace {
        horizon,
        per_subtask_max_response: BTreeMap::new(),
        per_task_max_e2e_response: BTreeMap::new(),
        deadline_misses: Vec::new(),
        activations: Vec::new(),
        segments,
    };
    for (t, task) in tasks.iter().enumerate() {
        for (pos, m) in sub_max[t].iter().enumerate() {
            if let Some(m) = m {
                trace.per_subtask_max_response.insert((task.id.clone(), pos + 1), *m);
            }
        }
        for rec in &mut records[t] {
            if rec.completion.is_none() && horizon - rec.activation > task.deadline + EPS {
                rec.missed = true;
            }
            if let Some(r) = rec.response() {
                let e = trace.per_task_max_e2e_response.entry(task.id.clone()).or_insert(r);
                *e = e.max(r);
            }
            if rec.missed {
                trace.deadline_misses.push((task.id.clone(), rec.index));
            }
        }
        trace.activations.append(&mut records[t]);
    }
    Ok(trace)
}

impl SimTrace {
    /// Writes one row per activation:
    /// `task,activation,activation_time,completion_time,response,missed`.
    /// Unfinished activations leave completion and response empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["task", "activation", "activation_time", "completion_time", "response", "missed"])?;
        for a in &self.activations {
            w.write_record([
                a.task.clone(),
                a.index.to_string(),
                a.activation.to_string(),
                a.completion.map(|c| c.to_string()).unwrap_or_default(),
                a.response().map(|r| r.to_string()).unwrap_or_default(),
                a.missed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
