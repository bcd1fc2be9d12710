//! The `gridweave` command line.
//!
//! Exit codes: 0 success, 1 run or validation failure, 2 usage or
//! configuration failure.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::components::builtin_registry;
use crate::federation::{run_lab, LabOptions};
use crate::kernel::{read_jsonl, Kernel, RecordKind, StopReason, Trace};
use crate::plan::{compile, CompileError};
use crate::scenario::{parse_scenario, validate, ScenarioModel};
use crate::time::{parse_duration, Micros};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "gridweave", version, about = "Cross-lab co-simulation orchestration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a scenario file and list violations.
    Validate { scenario: PathBuf },
    /// Print the per-lab execution plans as JSON.
    Plan { scenario: PathBuf },
    /// Run a scenario in one process or as one lab of a federation.
    Run(RunArgs),
    /// Export delivered values from a trace as CSV.
    Results(ResultsArgs),
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("mode").required(true).args(["single_process", "lab"])))]
struct RunArgs {
    scenario: PathBuf,
    /// Run every lab in this process.
    #[arg(long)]
    single_process: bool,
    /// Run only this lab, coordinating with the others over the network.
    #[arg(long, value_name = "ID")]
    lab: Option<String>,
    #[arg(long, default_value = "trace.jsonl")]
    out: PathBuf,
    /// Replace the scenario's run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Pace simulated time at this multiple of wall-clock time.
    #[arg(long)]
    rt_factor: Option<f64>,
}

#[derive(Args, Debug)]
struct ResultsArgs {
    trace: PathBuf,
    #[arg(long)]
    component: Option<String>,
    #[arg(long)]
    port: Option<String>,
    /// Inclusive lower bound, e.g. `60s` or `60000000`.
    #[arg(long, value_parser = duration_arg)]
    from: Option<Micros>,
    /// Inclusive upper bound.
    #[arg(long, value_parser = duration_arg)]
    to: Option<Micros>,
}

fn duration_arg(s: &str) -> Result<Micros, String> {
    parse_duration(s).ok_or_else(|| format!("not a duration: {s:?}"))
}

/// Summary printed by `run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment_id: String,
    pub completed: bool,
    pub reason: StopReason,
    pub final_t_us: Micros,
    pub trace_path: PathBuf,
    pub wall_clock_s: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

impl RunReport {
    pub fn from_trace(trace: &Trace, trace_path: &Path, wall_clock_s: f64) -> Self {
        RunReport {
            experiment_id: trace.experiment_id.clone(),
            completed: trace.outcome.completed(),
            reason: trace.outcome.reason,
            final_t_us: trace.outcome.final_t_us,
            trace_path: trace_path.to_path_buf(),
            wall_clock_s,
            failure: trace.outcome.failure.clone(),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = &mut io::stdout().lock();
    let stderr = &mut io::stderr().lock();
    match cli.command {
        Command::Validate { scenario } => cmd_validate(&scenario, stdout),
        Command::Plan { scenario } => cmd_plan(&scenario, stdout, stderr),
        Command::Run(a) => {
            let mode = match a.lab {
                Some(lab) => RunMode::Lab(lab),
                None => RunMode::SingleProcess,
            };
            let opts = RunOptions { mode, out: a.out, seed: a.seed, rt_factor: a.rt_factor };
            cmd_run(&a.scenario, &opts, stdout, stderr)
        }
        Command::Results(a) => {
            let filter = ResultsFilter { component: a.component, port: a.port, from_us: a.from, to_us: a.to };
            cmd_results(&a.trace, &filter, stdout, stderr)
        }
    }
}

fn load(path: &Path, err: &mut dyn Write) -> Result<ScenarioModel, i32> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        let _ = writeln!(err, "{}: {e}", path.display());
        EXIT_CONFIG
    })?;
    parse_scenario(&text).map_err(|e| {
        let _ = writeln!(err, "{}: {e}", path.display());
        EXIT_CONFIG
    })
}

/// Prints one violation per line. Parse errors go to the same stream.
pub fn cmd_validate(path: &Path, out: &mut dyn Write) -> i32 {
    let model = match load(path, out) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let violations = validate(&model);
    for v in &violations {
        let _ = writeln!(out, "{v}");
    }
    if violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

pub fn cmd_plan(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let model = match load(path, err) {
        Ok(m) => m,
        Err(code) => return code,
    };
    match compile(&model) {
        Ok(compiled) => {
            let _ = writeln!(out, "{}", compiled.plans_json());
            EXIT_OK
        }
        Err(CompileError::Invalid(violations)) => {
            for v in violations {
                let _ = writeln!(err, "{v}");
            }
            EXIT_FAILURE
        }
        Err(e) => {
            let _ = writeln!(err, "{e}");
            EXIT_FAILURE
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunMode {
    SingleProcess,
    Lab(String),
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub mode: RunMode,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub rt_factor: Option<f64>,
}

pub fn cmd_run(path: &Path, opts: &RunOptions, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut model = match load(path, err) {
        Ok(m) => m,
        Err(code) => return code,
    };
    if let Some(seed) = opts.seed {
        model.run.seed = seed;
    }
    if let Some(rt) = opts.rt_factor {
        if !(rt > 0.0 && rt.is_finite()) {
            let _ = writeln!(err, "--rt-factor must be positive, got {rt}");
            return EXIT_CONFIG;
        }
        model.run.rt_factor = Some(rt);
    }
    let compiled = match compile(&model) {
        Ok(c) => c,
        Err(CompileError::Invalid(violations)) => {
            for v in violations {
                let _ = writeln!(err, "{v}");
            }
            return EXIT_FAILURE;
        }
        Err(e) => {
            let _ = writeln!(err, "{e}");
            return EXIT_FAILURE;
        }
    };
    let registry = builtin_registry();
    let started = Instant::now();
    let trace = match &opts.mode {
        RunMode::SingleProcess => match Kernel::start(compiled.plans.values(), &registry, &model.run) {
            Ok(k) => k.run_to_completion(),
            Err(e) => {
                let _ = writeln!(err, "{e}");
                return EXIT_CONFIG;
            }
        },
        RunMode::Lab(lab) => match run_lab(&compiled, lab, &registry, &model.run, &LabOptions::from_env()) {
            Ok(r) => r.trace,
            Err(e) => {
                let _ = writeln!(err, "{e}");
                return EXIT_CONFIG;
            }
        },
    };
    let wall = started.elapsed().as_secs_f64();
    if let Err(e) = trace.write_jsonl(&opts.out) {
        let _ = writeln!(err, "{}: {e}", opts.out.display());
        return EXIT_CONFIG;
    }
    let report = RunReport::from_trace(&trace, &opts.out, wall);
    let _ = writeln!(out, "{}", serde_json::to_string(&report).expect("report serializes"));
    if let Some(f) = &report.failure {
        let _ = writeln!(err, "{f}");
    }
    if report.completed {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

#[derive(Clone, Debug, Default)]
pub struct ResultsFilter {
    pub component: Option<String>,
    pub port: Option<String>,
    pub from_us: Option<Micros>,
    pub to_us: Option<Micros>,
}

/// Writes matching delivery records as CSV `t_us,component,port,value`.
pub fn cmd_results(path: &Path, filter: &ResultsFilter, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let records =
        match std::fs::File::open(path).map_err(|e| e.to_string()).and_then(|f| read_jsonl(io::BufReader::new(f))) {
            Ok(r) => r,
            Err(e) => {
                let _ = writeln!(err, "{}: {e}", path.display());
                return EXIT_CONFIG;
            }
        };
    let mut w = csv::Writer::from_writer(out);
    let _ = w.write_record(["t_us", "component", "port", "value"]);
    for r in records.iter().filter(|r| r.kind == RecordKind::Deliver) {
        let port = r.port.as_deref().unwrap_or("");
        if filter.component.as_ref().is_some_and(|c| *c != r.component)
            || filter.port.as_ref().is_some_and(|p| p != port)
            || filter.from_us.is_some_and(|t| r.t_us < t)
            || filter.to_us.is_some_and(|t| r.t_us > t)
        {
            continue;
        }
        let value = r.value.map(|v| v.to_string()).unwrap_or_default();
        let _ = w.write_record([r.t_us.to_string().as_str(), &r.component, port, &value]);
    }
    match w.flush() {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            EXIT_CONFIG
        }
    }
}
