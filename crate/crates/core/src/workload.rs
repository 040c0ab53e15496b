//! Seeded task-set generation and the transient-overload transformations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{CompositeTask, TaskSet};
use crate::time::Time;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_tasks: usize,
    pub n_processors: usize,
    pub max_chain_length: usize,
    pub per_processor_target_utilization: f64,
    /// Share of each subtask's execution that is mandatory.
    pub mandatory_fraction_range: (f64, f64),
    pub period_range: (Time, Time),
    /// Deadline = factor * period.
    pub deadline_factor_range: (f64, f64),
    pub default_h: f64,
    pub default_k: f64,
    /// Round periods to whole time units.
    pub integral_periods: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 1,
            n_tasks: 8,
            n_processors: 4,
            max_chain_length: 4,
            per_processor_target_utilization: 0.6,
            mandatory_fraction_range: (0.4, 0.6),
            period_range: (50.0, 500.0),
            deadline_factor_range: (2.0, 4.0),
            default_h: 0.25,
            default_k: 0.25,
            integral_periods: false,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::Config(format!("{name} range [{lo}, {hi}] is empty or unordered")));
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("mandatory_fraction", self.mandatory_fraction_range)?;
        check_range("period", self.period_range)?;
        check_range("deadline_factor", self.deadline_factor_range)?;
        let (mlo, mhi) = self.mandatory_fraction_range;
        if mlo <= 0.0 || mhi > 1.0 {
            return Err(Error::Config(format!("mandatory fraction range [{mlo}, {mhi}] not within (0, 1]")));
        }
        if self.period_range.0 <= 0.0 || self.deadline_factor_range.0 <= 0.0 {
            return Err(Error::Config("periods and deadline factors must be positive".into()));
        }
        let u = self.per_processor_target_utilization;
        if !(u > 0.0 && u <= 1.0) {
            return Err(Error::Config(format!("target utilization {u} not within (0, 1]")));
        }
        if self.n_tasks == 0 || self.n_processors == 0 || self.max_chain_length == 0 {
            return Err(Error::Config("task, processor and chain counts must be positive".into()));
        }
        if self.max_chain_length > self.n_processors {
            return Err(Error::Config(format!(
                "chains of length {} cannot visit distinct processors out of {}",
                self.max_chain_length, self.n_processors
            )));
        }
        if self.default_h < 0.0 || self.default_k < 0.0 {
            return Err(Error::Config("error factors must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        GeneratorConfig { seed, ..self.clone() }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Splits `total` into `n` shares drawn uniformly from the simplex.
pub fn uunifast(rng: &mut impl Rng, n: usize, total: f64) -> Vec<f64> {
    let mut shares = Vec::with_capacity(n);
    let mut rest = total;
    for i in 1..n {
        let next = rest * rng.random::<f64>().powf(1.0 / (n - i) as f64);
        shares.push(rest - next);
        rest = next;
    }
    if n > 0 {
        shares.push(rest);
    }
    shares
}

fn draw_period(rng: &mut impl Rng, range: (f64, f64), integral: bool) -> Time {
    let p = uniform(rng, range);
    if integral {
        p.round().max(1.0)
    } else {
        p
    }
}

/// Generates a task set. Every processor that hosts subtasks gets exactly
/// the target utilization (full execution), split among its subtasks by
/// UUniFast; each subtask is then cut into mandatory and optional parts.
pub fn generate(config: &GeneratorConfig) -> Result<TaskSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_proc = config.n_processors;
    let processors: Vec<String> = (1..=n_proc).map(|p| format!("P{p}")).collect();

    struct Draft {
        period: Time,
        deadline: Time,
        procs: Vec<usize>,
    }
    let drafts: Vec<Draft> = (0..config.n_tasks)
        .map(|_| {
            let len = rng.random_range(1..=config.max_chain_length);
            let start = rng.random_range(0..n_proc);
            let period = draw_period(&mut rng, config.period_range, config.integral_periods);
            let deadline = period * uniform(&mut rng, config.deadline_factor_range);
            Draft {
                period,
                deadline,
                procs: (0..len).map(|j| (start + j) % n_proc).collect(),
            }
        })
        .collect();

    let mut exec: Vec<Vec<(Time, Time)>> = drafts.iter().map(|d| vec![(0.0, 0.0); d.procs.len()]).collect();
    for p in 0..n_proc {
        let hosted: Vec<(usize, usize)> = drafts
            .iter()
            .enumerate()
            .flat_map(|(i, d)| d.procs.iter().enumerate().filter(move |(_, &q)| q == p).map(move |(j, _)| (i, j)))
            .collect();
        let shares = uunifast(&mut rng, hosted.len(), config.per_processor_target_utilization);
        for (&(i, j), u) in hosted.iter().zip(shares) {
            let c = u * drafts[i].period;
            let f = uniform(&mut rng, config.mandatory_fraction_range);
            let m = c * f;
            exec[i][j] = (m, (c - m).max(0.0));
        }
    }

    let tasks = drafts
        .iter()
        .zip(exec)
        .enumerate()
        .map(|(i, (d, parts))| {
            let stages = d.procs.iter().zip(parts).map(|(&p, (m, o))| (processors[p].clone(), m, o, config.default_h, config.default_k));
            CompositeTask::new(format!("T{}", i + 1), d.period, d.deadline, stages)
        })
        .collect();
    Ok(TaskSet::new(processors, tasks))
}

fn check_percent(percent: f64) -> Result<()> {
    if !(0.0..1.0).contains(&percent) {
        return Err(domain(format!("percent {percent} not within [0, 1)")));
    }
    Ok(())
}

/// Every deadline shrinks by `percent`.
pub fn apply_deadline_reduction(task_set: &TaskSet, percent: f64) -> Result<TaskSet> {
    check_percent(percent)?;
    let mut out = task_set.clone();
    for t in &mut out.tasks {
        t.deadline *= 1.0 - percent;
    }
    out.reset();
    Ok(out)
}

/// Multiplies every mandatory and optional part by `max(scale, 1)`.
pub fn apply_balanced_overload(task_set: &TaskSet, scale: f64) -> Result<TaskSet> {
    if !(scale >= 0.0) {
        return Err(domain(format!("negative scale {scale}")));
    }
    let mut out = task_set.clone();
    out.scale_execution(scale.max(1.0));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverloadPart {
    OptionalOnly,
    MandatoryOnly,
}

/// Scales one part of the subtasks on a seeded subset of processors.
pub fn apply_unbalanced_overload(task_set: &TaskSet, scale: f64, part: OverloadPart, target_fraction: f64, seed: u64) -> Result<TaskSet> {
    if !(scale >= 0.0) {
        return Err(domain(format!("negative scale {scale}")));
    }
    let count = (target_fraction * task_set.processors.len() as f64).round() as usize;
    if !(target_fraction > 0.0) || count == 0 {
        return Err(domain(format!("target fraction {target_fraction} selects no processor")));
    }
    let count = count.min(task_set.processors.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..task_set.processors.len()).collect();
    order.shuffle(&mut rng);
    let chosen: Vec<&str> = order[..count].iter().map(|&p| task_set.processors[p].as_str()).collect();

    let factor = scale.max(1.0);
    let mut out = task_set.clone();
    for t in &mut out.tasks {
        for s in &mut t.chain {
            if chosen.contains(&s.spec.processor_id.as_str()) {
                match part {
                    OverloadPart::OptionalOnly => s.spec.optional *= factor,
                    OverloadPart::MandatoryOnly => s.spec.mandatory *= factor,
                }
            }
        }
    }
    out.reset();
    Ok(out)
}

/// Appends `extra` short-deadline tasks on the existing processors. Their
/// periods come from the lower quarter of the period range and their
/// deadlines use the smallest deadline factor, so they sort high.
pub fn apply_task_set_increase(task_set: &TaskSet, extra: usize, config: &GeneratorConfig) -> Result<TaskSet> {
    let mut out = task_set.clone();
    out.reset();
    if extra == 0 {
        return Ok(out);
    }
    let n_proc = out.processors.len();
    if n_proc == 0 {
        return Err(domain("task set has no processors"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a5c_15e7_0000_0000);
    let hosted: usize = out.tasks.iter().map(|t| t.chain.len()).sum();
    let per_subtask_u = config.per_processor_target_utilization / (hosted as f64 / n_proc as f64).max(1.0);
    let (plo, phi) = config.period_range;
    let max_len = config.max_chain_length.clamp(1, n_proc);
    for x in 0..extra {
        let len = rng.random_range(1..=max_len);
        let start = rng.random_range(0..n_proc);
        let period = draw_period(&mut rng, (plo, plo + (phi - plo) / 4.0), config.integral_periods);
        let deadline = period * config.deadline_factor_range.0;
        let stages: Vec<_> = (0..len)
            .map(|j| {
                let c = per_subtask_u * period;
                let f = uniform(&mut rng, config.mandatory_fraction_range);
                (out.processors[(start + j) % n_proc].clone(), c * f, c * (1.0 - f), config.default_h, config.default_k)
            })
            .collect();
        out.tasks.push(CompositeTask::new(format!("X{}", x + 1), period, deadline, stages));
    }
    Ok(out)
}

/// Every period shrinks by `percent`; deadlines stay.
pub fn apply_frequency_increase(task_set: &TaskSet, percent: f64) -> Result<TaskSet> {
    check_percent(percent)?;
    let mut out = task_set.clone();
    for t in &mut out.tasks {
        t.period *= 1.0 - percent;
        if t.period <= 0.0 {
            return Err(domain(format!("period of task {} would become non-positive", t.id)));
        }
    }
    out.reset();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priority::mandatory_relevance;
    use crate::utilization::utilizations;

    #[test]
    fn same_seed_same_set() {
        let c = GeneratorConfig::default();
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        assert_ne!(generate(&c).unwrap(), generate(&c.with_seed(2)).unwrap());
    }

    #[test]
    fn utilization_target_respected() {
        let c = GeneratorConfig::default();
        for seed in 0..50 {
            let ts = generate(&c.with_seed(seed)).unwrap();
            for u in utilizations(&ts) {
                assert!(u <= 0.6 + 1e-6, "seed {seed}: {u}");
            }
        }
    }

    #[test]
    fn all_mandatory_config() {
        let c = GeneratorConfig {
            mandatory_fraction_range: (1.0, 1.0),
            ..GeneratorConfig::default()
        };
        let ts = generate(&c).unwrap();
        for t in &ts.tasks {
            assert_eq!(mandatory_relevance(t).unwrap(), 1.0);
        }
    }

    #[test]
    fn infeasible_chain_length() {
        let c = GeneratorConfig {
            max_chain_length: 5,
            n_processors: 4,
            ..GeneratorConfig::default()
        };
        assert!(generate(&c).is_err());
    }

    #[test]
    fn deadline_reduction_examples() {
        let ts = TaskSet::new(vec!["P1".into()], vec![CompositeTask::new("A", 10.0, 20.0, [("P1".to_string(), 1.0, 1.0, 0.0, 0.0)])]);
        assert!((apply_deadline_reduction(&ts, 0.3).unwrap().tasks[0].deadline - 14.0).abs() < 1e-12);
        assert_eq!(apply_deadline_reduction(&ts, 0.0).unwrap(), ts);
        assert!((apply_deadline_reduction(&ts, 0.9).unwrap().tasks[0].deadline - 2.0).abs() < 1e-12);
        assert!(apply_deadline_reduction(&ts, 1.0).is_err());
    }

    #[test]
    fn balanced_overload_examples() {
        let ts = generate(&GeneratorConfig::default()).unwrap();
        assert_eq!(apply_balanced_overload(&ts, 0.0).unwrap(), apply_balanced_overload(&ts, 1.0).unwrap());
        let doubled = apply_balanced_overload(&ts, 2.0).unwrap();
        assert!((doubled.tasks[0].total_execution() - 2.0 * ts.tasks[0].total_execution()).abs() < 1e-9);
        let tripled = apply_balanced_overload(&ts, 3.0).unwrap();
        for (a, b) in utilizations(&tripled).iter().zip(utilizations(&ts)) {
            assert!((a - 3.0 * b).abs() < 1e-9);
        }
        assert!(apply_balanced_overload(&ts, -1.0).is_err());
    }

    #[test]
    fn unbalanced_overload_examples() {
        let ts = TaskSet::new(
            vec!["P1".into()],
            vec![
                CompositeTask::new("A", 10.0, 20.0, [("P1".to_string(), 1.0, 3.0, 0.0, 0.0)]),
                CompositeTask::new("B", 10.0, 20.0, [("P1".to_string(), 2.0, 0.0, 0.0, 0.0)]),
            ],
        );
        let o = apply_unbalanced_overload(&ts, 2.0, OverloadPart::OptionalOnly, 1.0, 3).unwrap();
        assert_eq!(o.tasks[0].chain[0].spec.optional, 6.0);
        assert_eq!(o.tasks[0].chain[0].spec.mandatory, 1.0);
        let m = apply_unbalanced_overload(&ts, 2.0, OverloadPart::MandatoryOnly, 1.0, 3).unwrap();
        assert_eq!(mandatory_relevance(&m.tasks[1]).unwrap(), 1.0);
        assert_eq!(apply_unbalanced_overload(&ts, 1.0, OverloadPart::MandatoryOnly, 1.0, 3).unwrap(), ts);
        assert!(apply_unbalanced_overload(&ts, 2.0, OverloadPart::MandatoryOnly, 0.1, 3).is_err());
    }

    #[test]
    fn task_set_increase_counts() {
        let c = GeneratorConfig::default();
        let ts = generate(&c).unwrap();
        assert_eq!(apply_task_set_increase(&ts, 0, &c).unwrap(), ts);
        assert_eq!(apply_task_set_increase(&ts, 3, &c).unwrap().tasks.len(), ts.tasks.len() + 3);
    }

    #[test]
    fn frequency_increase_examples() {
        let ts = generate(&GeneratorConfig::default()).unwrap();
        let half = apply_frequency_increase(&ts, 0.5).unwrap();
        for (a, b) in half.tasks.iter().zip(&ts.tasks) {
            assert!((a.period - b.period / 2.0).abs() < 1e-12);
            assert_eq!(a.deadline, b.deadline);
        }
        assert_eq!(apply_frequency_increase(&ts, 0.0).unwrap(), ts);
        let u0 = utilizations(&ts);
        let u = utilizations(&apply_frequency_increase(&ts, 0.3).unwrap());
        for (a, b) in u.iter().zip(u0) {
            assert!((a - b / 0.7).abs() < 1e-9);
        }
    }
}
