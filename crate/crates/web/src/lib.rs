use std::collections::BTreeMap;

use impresched::format::{parse_task_set, to_json};
use impresched::metrics::{run_experiment, run_mode, ExperimentConfig, Mode};
use impresched::sim::{simulate_with, SimOptions};
use impresched::workload::GeneratorConfig;
use impresched::{assign_priorities, Outcome, Scheme, TaskSet};
use serde::Serialize;
use wasm_bindgen::prelude::*;

// Browsers get one thread, keep sweeps small.
const MAX_SWEEP_SETS: usize = 200;

#[derive(Serialize)]
struct TaskView {
    id: String,
    deadline: f64,
    wcrt: Option<f64>,
    schedulable: bool,
    final_error: f64,
    optional: Vec<f64>,
}

#[derive(Serialize)]
struct AnalysisView {
    schedulable: bool,
    reason: Option<String>,
    iterations: usize,
    tasks: Vec<TaskView>,
}

#[derive(Serialize)]
struct Bar {
    processor: String,
    task: String,
    stage: usize,
    start: f64,
    end: f64,
}

#[derive(Serialize)]
struct SimView {
    horizon: f64,
    processors: Vec<String>,
    tasks: Vec<String>,
    bars: Vec<Bar>,
    max_response: BTreeMap<String, f64>,
    misses: usize,
}

fn parse_mode(mode: &str) -> Result<Mode, String> {
    mode.parse().map_err(|e| format!("{e}"))
}

fn load(json: &str) -> Result<TaskSet, String> {
    parse_task_set(json).map_err(|e| e.to_string())
}

pub fn analyze_json(json: &str, mode: &str) -> Result<String, String> {
    let ts = load(json)?;
    let mode = parse_mode(mode)?;
    let out = run_mode(&ts, mode).map_err(|e| e.to_string())?;
    let tasks = out
        .configuration
        .tasks
        .iter()
        .map(|t| {
            let r = &out.report.per_task[&t.id];
            TaskView {
                id: t.id.clone(),
                deadline: t.deadline,
                wcrt: r.end_to_end_wcrt,
                schedulable: r.schedulable,
                final_error: r.final_error,
                optional: t.chain.iter().map(|s| s.assigned_optional).collect(),
            }
        })
        .collect();
    let reason = match out.verdict.outcome {
        Outcome::Schedulable => None,
        Outcome::Unschedulable(r) => Some(format!("{r:?}")),
    };
    let view = AnalysisView {
        schedulable: reason.is_none(),
        reason,
        iterations: out.verdict.iterations,
        tasks,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// In imprecise mode the simulated configuration is the one the analysis settled on.
pub fn simulate_json(json: &str, horizon: f64, mode: &str) -> Result<String, String> {
    let mut ts = load(json)?;
    if parse_mode(mode)? == Mode::Imprecise {
        ts = run_mode(&ts, Mode::Imprecise).map_err(|e| e.to_string())?.configuration;
    }
    let ord = assign_priorities(&mut ts, Scheme::Global).map_err(|e| e.to_string())?;
    let tr = simulate_with(&ts, &ord, horizon, SimOptions { record_segments: true }).map_err(|e| e.to_string())?;
    let bars = tr
        .segments
        .iter()
        .map(|s| Bar {
            processor: ts.processors[s.processor].clone(),
            task: ts.tasks[s.task].id.clone(),
            stage: s.pos,
            start: s.start,
            end: s.end,
        })
        .collect();
    let view = SimView {
        horizon,
        processors: ts.processors.clone(),
        tasks: ts.tasks.iter().map(|t| t.id.clone()).collect(),
        bars,
        max_response: tr.per_task_max_e2e_response.clone(),
        misses: tr.deadline_misses.len(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

pub fn sweep_json(experiment: &str, n_task_sets: usize, seed: u64) -> Result<String, String> {
    let mut cfg = ExperimentConfig::new(
        experiment.parse().map_err(|e| format!("{e}"))?,
        GeneratorConfig::default().with_seed(seed),
        n_task_sets.clamp(1, MAX_SWEEP_SETS),
    );
    cfg.threads = None;
    let res = run_experiment(&cfg).map_err(|e| e.to_string())?;
    serde_json::to_string(&res).map_err(|e| e.to_string())
}

pub fn generate_json(seed: u64) -> Result<String, String> {
    let ts = impresched::workload::generate(&GeneratorConfig::default().with_seed(seed)).map_err(|e| e.to_string())?;
    Ok(to_json(&ts))
}

#[wasm_bindgen]
pub fn analyze_taskset(json: &str, mode: &str) -> Result<String, JsValue> {
    analyze_json(json, mode).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate_taskset(json: &str, horizon: f64, mode: &str) -> Result<String, JsValue> {
    simulate_json(json, horizon, mode).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn run_sweep(experiment: &str, n_task_sets: usize, seed: u32) -> Result<String, JsValue> {
    sweep_json(experiment, n_task_sets, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn random_taskset(seed: u32) -> Result<String, JsValue> {
    generate_json(seed.into()).map_err(|e| JsValue::from_str(&e))
}
