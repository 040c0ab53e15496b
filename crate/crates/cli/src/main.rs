use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use impresched::format::{read_task_set, to_json};
use impresched::metrics::{run_experiment, run_mode, ExperimentConfig, Mode};
use impresched::sim::{default_horizon, simulate};
use impresched::workload::{generate, GeneratorConfig};
use impresched::{assign_priorities, validate, AnalysisOutcome, Outcome, Scheme};
use serde::Serialize;

const THREADS_VAR: &str = "IMPRESCHED_THREADS";

/// Schedulability analysis of end-to-end task chains with imprecise
/// (mandatory + optional) computation.
///
/// Exit codes: 0 schedulable / valid, 2 unschedulable / invalid, 1 on any
/// input or usage error.
#[derive(Parser, Debug)]
#[command(name = "impresched", version, about, verbatim_doc_comment)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analyze a task-set file and print a per-task table.
    Analyze {
        taskset: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Imprecise)]
        mode: ModeArg,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an overload experiment and write its CSV table.
    Experiment {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_task_sets: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a task set and report observed response times.
    Simulate {
        taskset: PathBuf,
        /// Simulated time; defaults to three hyperperiods when they are small.
        #[arg(long)]
        horizon: Option<f64>,
        /// Simulate the configuration chosen by this analysis mode.
        #[arg(long, value_enum, default_value_t = ModeArg::Normal)]
        mode: ModeArg,
        /// Per-activation CSV trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Check a task-set file for structural problems.
    Validate { taskset: PathBuf },
    /// Generate a random task set.
    Generate {
        /// Generator parameters (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Normal,
    Imprecise,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Normal => Mode::Normal,
            ModeArg::Imprecise => Mode::Imprecise,
        }
    }
}

#[derive(Serialize)]
struct TaskRow {
    end_to_end_wcrt: Option<f64>,
    deadline: f64,
    schedulable: bool,
    shortage: f64,
    final_error: f64,
    assigned_optional: Vec<f64>,
}

#[derive(Serialize)]
struct Report {
    mode: &'static str,
    verdict: &'static str,
    reason: Option<String>,
    iterations: usize,
    tasks: BTreeMap<String, TaskRow>,
    processor_utilization: BTreeMap<String, f64>,
}

fn report(mode: Mode, out: &AnalysisOutcome) -> Report {
    let (verdict, reason) = match out.verdict.outcome {
        Outcome::Schedulable => ("Schedulable", None),
        Outcome::Unschedulable(r) => ("Unschedulable", Some(format!("{r:?}"))),
    };
    let tasks = out
        .configuration
        .tasks
        .iter()
        .map(|t| {
            let r = &out.report.per_task[&t.id];
            let row = TaskRow {
                end_to_end_wcrt: r.end_to_end_wcrt,
                deadline: t.deadline,
                schedulable: r.schedulable,
                shortage: r.shortage,
                final_error: r.final_error,
                assigned_optional: t.chain.iter().map(|s| s.assigned_optional).collect(),
            };
            (t.id.clone(), row)
        })
        .collect();
    Report {
        mode: mode.label(),
        verdict,
        reason,
        iterations: out.verdict.iterations,
        tasks,
        processor_utilization: out.report.per_processor.clone(),
    }
}

fn print_table(rep: &Report) {
    println!("{:<12} {:>12} {:>12} {:>6} {:>10}", "task", "e2e wcrt", "deadline", "ok", "error");
    for (id, t) in &rep.tasks {
        let wcrt = t.end_to_end_wcrt.map_or_else(|| "unbounded".to_string(), |r| format!("{r:.3}"));
        println!(
            "{:<12} {:>12} {:>12.3} {:>6} {:>10.4}",
            id,
            wcrt,
            t.deadline,
            if t.schedulable { "yes" } else { "no" },
            t.final_error
        );
    }
    for (p, u) in &rep.processor_utilization {
        println!("{p:<12} utilization {u:.4}");
    }
    match &rep.reason {
        None => println!("{} ({} mode, {} iterations)", rep.verdict, rep.mode, rep.iterations),
        Some(r) => println!("{}: {r} ({} mode, {} iterations)", rep.verdict, rep.mode, rep.iterations),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v.trim().parse().with_context(|| format!("{THREADS_VAR}={v:?} is not a thread count"))?;
            Ok(Some(n.max(1)))
        }
        _ => Ok(None),
    }
}

fn analyze(taskset: &Path, mode: Mode, out: Option<&Path>) -> Result<ExitCode> {
    let ts = read_task_set(taskset).with_context(|| format!("reading {}", taskset.display()))?;
    let problems = validate(&ts);
    if let Some(v) = problems.first() {
        bail!("invalid task set: {} ({} problems)", v.detail, problems.len());
    }
    let outcome = run_mode(&ts, mode)?;
    let rep = report(mode, &outcome);
    print_table(&rep);
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, &rep)?;
    writeln!(w)?;
    w.flush()?;
    Ok(if outcome.verdict.is_schedulable() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn experiment(config: &Path, seed: Option<u64>, n_task_sets: Option<usize>, out: Option<&Path>) -> Result<ExitCode> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    if let Some(s) = seed {
        cfg.generator.seed = s;
    }
    if let Some(n) = n_task_sets {
        cfg.n_task_sets = n;
    }
    if let Some(t) = threads_from_env()? {
        cfg.threads = Some(cfg.threads.map_or(t, |c| c.min(t)));
    }
    let res = run_experiment(&cfg)?;
    let mut w = output(out)?;
    res.write_csv(&mut w)?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn simulate_cmd(taskset: &Path, horizon: Option<f64>, mode: Mode, trace: Option<&Path>) -> Result<ExitCode> {
    let ts = read_task_set(taskset).with_context(|| format!("reading {}", taskset.display()))?;
    let mut cfg = match mode {
        Mode::Normal => ts,
        Mode::Imprecise => run_mode(&ts, mode)?.configuration,
    };
    let ord = assign_priorities(&mut cfg, Scheme::Global)?;
    let horizon = horizon.unwrap_or_else(|| default_horizon(&cfg));
    let tr = simulate(&cfg, &ord, horizon)?;
    println!("horizon {horizon}");
    println!("{:<12} {:>12} {:>12} {:>8}", "task", "max e2e", "deadline", "misses");
    for t in &cfg.tasks {
        let misses = tr.deadline_misses.iter().filter(|(id, _)| *id == t.id).count();
        let max = tr.per_task_max_e2e_response.get(&t.id).map_or_else(|| "-".to_string(), |r| format!("{r:.3}"));
        println!("{:<12} {:>12} {:>12.3} {:>8}", t.id, max, t.deadline, misses);
    }
    println!("{} activations, {} deadline misses", tr.activations.len(), tr.deadline_misses.len());
    if let Some(p) = trace {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        tr.write_csv(BufWriter::new(f))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn validate_cmd(taskset: &Path) -> Result<ExitCode> {
    let ts = read_task_set(taskset).with_context(|| format!("reading {}", taskset.display()))?;
    let problems = validate(&ts);
    for v in &problems {
        println!("{}: {}: {}", v.entity, v.rule, v.detail);
    }
    if problems.is_empty() {
        println!("valid: {} tasks on {} processors", ts.n_tasks(), ts.n_processors());
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

fn generate_cmd(config: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<ExitCode> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<GeneratorConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => GeneratorConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ts = generate(&cfg)?;
    let mut w = output(out)?;
    writeln!(w, "{}", to_json(&ts))?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Analyze { taskset, mode, out } => analyze(&taskset, mode.into(), out.as_deref()),
        Command::Experiment {
            config,
            seed,
            n_task_sets,
            out,
        } => experiment(&config, seed, n_task_sets, out.as_deref()),
        Command::Simulate {
            taskset,
            horizon,
            mode,
            trace,
        } => simulate_cmd(&taskset, horizon, mode.into(), trace.as_deref()),
        Command::Validate { taskset } => validate_cmd(&taskset),
        Command::Generate { config, seed, out } => generate_cmd(config.as_deref(), seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    // clap reports usage errors with status 2, which is reserved for verdicts.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
