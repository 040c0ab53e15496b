//! Performance criteria and the overload experiment harness.
//!
//! Each experiment generates a fixed batch of base task sets, applies one
//! overload transformation per sweep value, and runs both the normal
//! (unreduced) and the imprecise analysis on every transformed set. The
//! base sets are shared by all sweep values of a run.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{imprecise_schedulability_analysis, normal_schedulability_analysis, AnalysisConfig, AnalysisOutcome, Verdict};
use crate::error::{domain, Error, Result};
use crate::model::TaskSet;
use crate::workload::{
    apply_balanced_overload, apply_deadline_reduction, apply_frequency_increase, apply_task_set_increase, apply_unbalanced_overload, generate,
    GeneratorConfig, OverloadPart,
};

/// Fraction of unschedulable verdicts.
pub fn failure_rate(verdicts: &[Verdict]) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(domain("failure rate of an empty batch"));
    }
    Ok(verdicts.iter().filter(|v| !v.is_schedulable()).count() as f64 / verdicts.len() as f64)
}

/// Largest `e2e WCRT / period` over the tasks of a schedulable outcome.
pub fn schedulability_index(outcome: &AnalysisOutcome) -> Option<f64> {
    if !outcome.verdict.is_schedulable() {
        return None;
    }
    let ts = &outcome.configuration;
    ts.tasks
        .iter()
        .filter_map(|t| Some(outcome.report.per_task.get(&t.id)?.end_to_end_wcrt? / t.period))
        .reduce(f64::max)
}

/// Mean of the per-set indices that exist; `None` (UNS) if none does.
pub fn aggregate_schedulability_index(per_set: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = per_set.iter().flatten().copied().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Per-task final errors of one outcome; every task of an unschedulable
/// outcome counts as error 1.
pub fn task_errors(outcome: &AnalysisOutcome) -> Vec<f64> {
    let sched = outcome.verdict.is_schedulable();
    outcome
        .configuration
        .tasks
        .iter()
        .map(|t| if sched { t.final_error() } else { 1.0 })
        .collect()
}

/// Mean final error over all tasks of all outcomes.
pub fn average_final_error(outcomes: &[AnalysisOutcome]) -> Result<f64> {
    let errs: Vec<f64> = outcomes.iter().flat_map(task_errors).collect();
    if errs.is_empty() {
        return Err(domain("final error of an empty batch"));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Largest final error over all tasks of all outcomes.
pub fn worst_final_error(outcomes: &[AnalysisOutcome]) -> Result<f64> {
    outcomes
        .iter()
        .flat_map(task_errors)
        .reduce(f64::max)
        .ok_or_else(|| domain("final error of an empty batch"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentId {
    DeadlineReduction,
    BalancedOverload,
    UnbalancedOptional,
    UnbalancedMandatory,
    TaskSetIncrease,
    FrequencyIncrease,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::DeadlineReduction,
        ExperimentId::BalancedOverload,
        ExperimentId::UnbalancedOptional,
        ExperimentId::UnbalancedMandatory,
        ExperimentId::TaskSetIncrease,
        ExperimentId::FrequencyIncrease,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ExperimentId::DeadlineReduction => "1",
            ExperimentId::BalancedOverload => "2",
            ExperimentId::UnbalancedOptional => "3a",
            ExperimentId::UnbalancedMandatory => "3b",
            ExperimentId::TaskSetIncrease => "4",
            ExperimentId::FrequencyIncrease => "5",
        }
    }

    pub fn sweep_parameter(self) -> &'static str {
        match self {
            ExperimentId::DeadlineReduction => "deadline_reduction",
            ExperimentId::FrequencyIncrease => "period_reduction",
            ExperimentId::TaskSetIncrease => "extra_tasks",
            _ => "scale",
        }
    }

    /// Ten points: 0%..90% for the percentage sweeps, 0..9 otherwise.
    pub fn default_sweep(self) -> Vec<f64> {
        match self {
            ExperimentId::DeadlineReduction | ExperimentId::FrequencyIncrease => (0..10).map(|i| i as f64 / 10.0).collect(),
            _ => (0..10).map(f64::from).collect(),
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown experiment id {s:?} (expected 1, 2, 3a, 3b, 4 or 5)")))
    }
}

fn default_n_task_sets() -> usize {
    1000
}

fn default_fraction() -> f64 {
    0.5
}

/// Experiment description, read from JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default = "default_n_task_sets")]
    pub n_task_sets: usize,
    /// Defaults to the experiment's ten-point sweep.
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    /// Share of processors hit by the unbalanced overload.
    #[serde(default = "default_fraction")]
    pub unbalanced_fraction: f64,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(id: ExperimentId, generator: GeneratorConfig, n_task_sets: usize) -> Self {
        ExperimentConfig {
            experiment: id.label().to_string(),
            generator,
            n_task_sets,
            sweep: None,
            unbalanced_fraction: default_fraction(),
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    Normal,
    Imprecise,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Normal => "normal",
            Mode::Imprecise => "imprecise",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Mode::Normal),
            "imprecise" => Ok(Mode::Imprecise),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Runs the analysis of the given mode.
pub fn run_mode(task_set: &TaskSet, mode: Mode) -> Result<AnalysisOutcome> {
    match mode {
        Mode::Normal => normal_schedulability_analysis(task_set),
        Mode::Imprecise => imprecise_schedulability_analysis(task_set, &AnalysisConfig::default()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub failure_rate: f64,
    /// `None` stands for UNS.
    pub schedulability_index: Option<f64>,
    pub average_final_error: f64,
    pub worst_final_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mode: Mode,
    pub metrics: PointMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: ExperimentId,
    pub sweep_parameter: String,
    pub values: Vec<f64>,
    /// Per value, normal row then imprecise row.
    pub rows: Vec<SweepRow>,
    pub n_task_sets: usize,
    pub seed: u64,
}

impl ExperimentResult {
    pub fn row(&self, value_index: usize, mode: Mode) -> &SweepRow {
        &self.rows[2 * value_index + usize::from(mode == Mode::Imprecise)]
    }

    pub fn series(&self, mode: Mode) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    /// `value,mode,failure_rate,sched_index,avg_final_error,worst_final_error`
    /// with `UNS` where no task set was schedulable.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["value", "mode", "failure_rate", "sched_index", "avg_final_error", "worst_final_error"])?;
        for r in &self.rows {
            let m = &r.metrics;
            w.write_record([
                r.value.to_string(),
                r.mode.label().to_string(),
                format!("{:.6}", m.failure_rate),
                m.schedulability_index.map_or_else(|| "UNS".to_string(), |v| format!("{v:.6}")),
                format!("{:.6}", m.average_final_error),
                format!("{:.6}", m.worst_final_error),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Applies the experiment's overload transformation at sweep value `value`.
/// `set_seed` seeds the choices the transformation makes itself.
pub fn transform(
    id: ExperimentId,
    base: &TaskSet,
    value: f64,
    generator: &GeneratorConfig,
    unbalanced_fraction: f64,
    set_seed: u64,
) -> Result<TaskSet> {
    match id {
        ExperimentId::DeadlineReduction => apply_deadline_reduction(base, value),
        ExperimentId::BalancedOverload => apply_balanced_overload(base, value),
        ExperimentId::UnbalancedOptional => apply_unbalanced_overload(base, value, OverloadPart::OptionalOnly, unbalanced_fraction, set_seed),
        ExperimentId::UnbalancedMandatory => apply_unbalanced_overload(base, value, OverloadPart::MandatoryOnly, unbalanced_fraction, set_seed),
        ExperimentId::TaskSetIncrease => {
            if !(value >= 0.0) {
                return Err(domain(format!("negative task count {value}")));
            }
            apply_task_set_increase(base, value.round() as usize, &generator.with_seed(set_seed))
        }
        ExperimentId::FrequencyIncrease => apply_frequency_increase(base, value),
    }
}

struct SetResult {
    schedulable: bool,
    index: Option<f64>,
    errors: Vec<f64>,
}

fn summarize(outcome: &AnalysisOutcome) -> SetResult {
    SetResult {
        schedulable: outcome.verdict.is_schedulable(),
        index: schedulability_index(outcome),
        errors: task_errors(outcome),
    }
}

fn aggregate(results: &[SetResult]) -> PointMetrics {
    let failures = results.iter().filter(|r| !r.schedulable).count();
    let indices: Vec<Option<f64>> = results.iter().map(|r| r.index).collect();
    let errs: Vec<f64> = results.iter().flat_map(|r| r.errors.iter().copied()).collect();
    PointMetrics {
        failure_rate: failures as f64 / results.len() as f64,
        schedulability_index: aggregate_schedulability_index(&indices),
        average_final_error: if errs.is_empty() { 0.0 } else { errs.iter().sum::<f64>() / errs.len() as f64 },
        worst_final_error: errs.iter().copied().fold(0.0, f64::max),
    }
}

/// Runs one experiment. Results are identical for identical configs no
/// matter how many worker threads are used.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let id: ExperimentId = config.experiment.parse()?;
    if config.n_task_sets == 0 {
        return Err(Error::Config("n_task_sets must be positive".into()));
    }
    config.generator.validate()?;
    let values = config.sweep.clone().unwrap_or_else(|| id.default_sweep());
    if values.is_empty() {
        return Err(Error::Config("empty sweep".into()));
    }

    let work = || -> Result<ExperimentResult> {
        let seed0 = config.generator.seed;
        let bases: Vec<TaskSet> = (0..config.n_task_sets as u64)
            .into_par_iter()
            .map(|s| generate(&config.generator.with_seed(seed0.wrapping_add(s))))
            .collect::<Result<_>>()?;

        let mut rows = Vec::with_capacity(2 * values.len());
        for &value in &values {
            let per_set: Vec<(SetResult, SetResult)> = bases
                .par_iter()
                .enumerate()
                .map(|(s, base)| {
                    let set_seed = seed0.wrapping_add(s as u64);
                    let ts = transform(id, base, value, &config.generator, config.unbalanced_fraction, set_seed)?;
                    let normal = normal_schedulability_analysis(&ts)?;
                    let imprecise = imprecise_schedulability_analysis(&ts, &AnalysisConfig::default())?;
                    Ok((summarize(&normal), summarize(&imprecise)))
                })
                .collect::<Result<_>>()?;
            let (normal, imprecise): (Vec<SetResult>, Vec<SetResult>) = per_set.into_iter().unzip();
            rows.push(SweepRow {
                value,
                mode: Mode::Normal,
                metrics: aggregate(&normal),
            });
            rows.push(SweepRow {
                value,
                mode: Mode::Imprecise,
                metrics: aggregate(&imprecise),
            });
        }
        Ok(ExperimentResult {
            experiment: id,
            sweep_parameter: id.sweep_parameter().to_string(),
            values: values.clone(),
            rows,
            n_task_sets: config.n_task_sets,
            seed: seed0,
        })
    };

    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}
