//! Command-line front end.
//!
//! `run` executes one or more scenarios (named catalog entries or config
//! files), writes the trajectory CSV for each, and optionally the SVG plots.
//! Exit codes: 0 success, 1 usage/config error, 2 solver failure,
//! 3 integrity violation.

use crate::config;
use crate::plots;
use crate::scenarios::{self, Scenario};
use crate::sim::{self, StepError, TrajectoryRecord};
use crate::trajectory;
use clap::{Args, Parser, Subcommand};
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_INTEGRITY: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "ecp-sim",
    about = "Rigid-body motion prediction with patch contact resolved through an equivalent contact point",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run scenarios and write trajectory CSVs.
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Catalog scenario name (repeatable).
    #[arg(long = "scenario")]
    scenarios: Vec<String>,
    /// Scenario config file (repeatable).
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// Output CSV path (single run) or directory (multiple runs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also emit SVG plots next to each CSV.
    #[arg(long)]
    plots: bool,
    /// Override the time step [s].
    #[arg(long)]
    h: Option<f64>,
    /// Override the simulated duration [s].
    #[arg(long)]
    duration: Option<f64>,
    /// Override the solver residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Override the per-stage Newton iteration cap.
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    /// Write per-step seeding/active-set diagnostics to this file.
    #[arg(long = "seed-log")]
    seed_log: Option<PathBuf>,
    /// Log verbosity.
    #[arg(long = "log-level", default_value = "warn", value_parser = ["error", "warn", "info", "debug"])]
    log_level: String,
}

/// Entry point taking raw arguments; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap renders --help/--version through the same path; those are
            // not usage errors
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(args) => run_command(args),
    }
}

fn init_logging(level: &str) {
    let filter = match level {
        "error" => log::LevelFilter::Error,
        "info" => log::LevelFilter::Info,
        "debug" => log::LevelFilter::Debug,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .try_init();
}

fn load_scenarios(args: &RunArgs) -> Result<Vec<Scenario>, String> {
    let mut out = Vec::new();
    for name in &args.scenarios {
        out.push(scenarios::by_name(name).map_err(|e| e.to_string())?);
    }
    for path in &args.configs {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        out.push(
            config::parse_config(&text)
                .map_err(|e| format!("{}: {e}", path.display()))?,
        );
    }
    if out.is_empty() {
        return Err(format!(
            "nothing to run: pass --scenario NAME or --config PATH (available scenarios: {})",
            scenarios::scenario_names().join(", ")
        ));
    }
    Ok(out)
}

fn apply_overrides(s: &mut Scenario, args: &RunArgs) {
    if let Some(h) = args.h {
        s.h = h;
    }
    if let Some(d) = args.duration {
        s.duration = d;
    }
    if let Some(tol) = args.tol {
        s.solver.tol_residual = tol;
    }
    if let Some(iters) = args.max_iters {
        s.solver.max_newton_iters = iters;
    }
}

fn out_path_for(s: &Scenario, args: &RunArgs, multiple: bool) -> PathBuf {
    match (&args.out, multiple) {
        (Some(p), false) => p.clone(),
        (Some(dir), true) => dir.join(format!("{}_trajectory.csv", s.name)),
        (None, _) => PathBuf::from(format!("{}_trajectory.csv", s.name)),
    }
}

fn write_seed_log(path: &Path, records: &[TrajectoryRecord]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,t,active_index,retried,a1x,a1y,a1z,a2x,a2y,a2z")?;
    for r in records {
        let a1 = r.contact.unknowns.ecp_body;
        let a2 = r.contact.unknowns.ecp_support;
        writeln!(
            f,
            "{},{:.6},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.step,
            r.time,
            r.diagnostics.active_index,
            r.diagnostics.retried,
            a1.x,
            a1.y,
            a1.z,
            a2.x,
            a2.y,
            a2.z
        )?;
    }
    Ok(())
}

struct RunOutput {
    name: String,
    records: Vec<TrajectoryRecord>,
    error: Option<(i32, String)>,
}

fn execute_one(s: &Scenario) -> RunOutput {
    match sim::run(s, &s.solver) {
        Ok(records) => RunOutput {
            name: s.name.clone(),
            records,
            error: None,
        },
        Err(e) => {
            let code = match e.source {
                StepError::Penetration { .. } | StepError::PhantomContact { .. } => EXIT_INTEGRITY,
                _ => EXIT_SOLVER,
            };
            let msg = e.to_string();
            RunOutput {
                name: s.name.clone(),
                records: e.partial,
                error: Some((code, msg)),
            }
        }
    }
}

fn run_command(args: RunArgs) -> i32 {
    init_logging(&args.log_level);
    let mut list = match load_scenarios(&args) {
        Ok(l) => l,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    for s in &mut list {
        apply_overrides(s, &args);
        if let Err(e) = s.validate() {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    }
    let multiple = list.len() > 1;
    if multiple {
        if let Some(dir) = &args.out {
            if let Err(e) = std::fs::create_dir_all(dir) {
                eprintln!("error: cannot create {}: {e}", dir.display());
                return EXIT_USAGE;
            }
        }
    }

    let outputs = run_batch(&list);

    let mut exit = EXIT_OK;
    for (s, out) in list.iter().zip(outputs) {
        let csv_path = out_path_for(s, &args, multiple);
        if !out.records.is_empty() || out.error.is_none() {
            if let Err(e) = trajectory::write_trajectory(&out.records, &csv_path) {
                eprintln!("error: {e}");
                exit = exit.max(EXIT_USAGE);
                continue;
            }
            println!(
                "{}: {} steps -> {}",
                out.name,
                out.records.len(),
                csv_path.display()
            );
        }
        if args.plots && !out.records.is_empty() {
            let prefix = csv_path.with_extension("");
            match plots::emit_plots(&out.records, &prefix) {
                Ok(files) => {
                    for f in files {
                        println!("{}: plot -> {}", out.name, f.display());
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit = exit.max(EXIT_USAGE);
                }
            }
        }
        if let Some(seed_log) = &args.seed_log {
            let path = if multiple {
                seed_log.with_file_name(format!(
                    "{}_{}",
                    out.name,
                    seed_log
                        .file_name()
                        .map(|f| f.to_string_lossy().to_string())
                        .unwrap_or_else(|| "seed.log".into())
                ))
            } else {
                seed_log.clone()
            };
            if let Err(e) = write_seed_log(&path, &out.records) {
                eprintln!("error: seed log: {e}");
                exit = exit.max(EXIT_USAGE);
            }
        }
        if let Some((code, msg)) = out.error {
            eprintln!("error in `{}`: {msg}", out.name);
            exit = exit.max(code);
        }
    }
    exit
}

#[cfg(feature = "parallel")]
fn run_batch(list: &[Scenario]) -> Vec<RunOutput> {
    use rayon::prelude::*;
    if list.len() > 1 {
        list.par_iter().map(execute_one).collect()
    } else {
        list.iter().map(execute_one).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn run_batch(list: &[Scenario]) -> Vec<RunOutput> {
    list.iter().map(execute_one).collect()
}
