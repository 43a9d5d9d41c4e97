use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pmefv::convergence::{refinement_study_min, Coupling};
use pmefv::io::{self, RunConfig};
use pmefv::mesh;
use pmefv::solver;

mod selftest;

const THREADS_VAR: &str = "PMEFV_THREADS";

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_STRICT: u8 = 4;

/// Finite volume solver for the porous medium equation with BDF2 time stepping.
///
/// The worker thread count for refinement studies is read from PMEFV_THREADS.
#[derive(Debug, Parser)]
#[command(name = "pmefv", version)]
struct Cli {
    /// Treat energy or mass violations as fatal (exit code 4).
    #[arg(long, global = true)]
    strict: bool,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs the scheme described by a configuration file.
    Run { config: PathBuf },
    /// Runs a refinement study against the exact solution of the initial preset.
    Converge {
        config: PathBuf,
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(2..))]
        levels: u64,
        /// Time step coupling: `h` halves Δt with h, `h2` quarters it.
        #[arg(long, default_value = "h")]
        coupling: Coupling,
    },
    /// Loads a mesh file and reports the admissibility checks.
    CheckMesh { file: PathBuf },
    /// Runs the built-in invariant battery.
    Selftest,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::new(
            EXIT_CONFIG,
            format!("{THREADS_VAR} must be a positive integer, got `{value}`"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::new(EXIT_FAILURE, e))
}

fn output_dir(cli_out: &Option<PathBuf>, config: &RunConfig) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    io::load_config(path).map_err(|e| Failure::new(EXIT_CONFIG, e))
}

fn cmd_run(path: &Path, strict: bool, out: &Option<PathBuf>) -> Result<(), Failure> {
    let config = load(path)?;
    let mesh = config.build_mesh().map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let grid = config.time_grid().map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let u0 = config.initial_vector(&mesh).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let (field, report) = solver::run(&mesh, &grid, &u0, &config.solver).map_err(|e| Failure::new(EXIT_SOLVER, e))?;
    let dir = output_dir(out, &config);
    let written = io::write_run_outputs(&dir, &field, &report).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    println!(
        "{} cells, {} steps, q = {}: max mass drift {:.3e}, min energy slack {:.3e}, {} Newton iterations",
        mesh.num_cells(),
        grid.steps(),
        report.q,
        report.max_mass_drift(),
        report.min_energy_slack(),
        report.total_newton_iterations()
    );
    for p in written {
        println!("wrote {}", p.display());
    }
    for v in &report.violations {
        eprintln!("warning: {v}");
    }
    if strict && !report.violations.is_empty() {
        return Err(Failure::new(
            EXIT_STRICT,
            format!("{} estimate violation(s) in strict mode", report.violations.len()),
        ));
    }
    Ok(())
}

fn cmd_converge(
    path: &Path,
    levels: usize,
    coupling: Coupling,
    strict: bool,
    out: &Option<PathBuf>,
) -> Result<(), Failure> {
    let config = load(path)?;
    let spec = config
        .study(levels, coupling)
        .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let base = config.build_mesh().map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let reference = config
        .reference(&base)
        .map_err(|e| Failure::new(EXIT_CONFIG, e))?
        .ok_or_else(|| {
            Failure::new(
                EXIT_CONFIG,
                "`[model] u0` must be barenblatt(t0), or cosine(k) with q = 1, for a refinement study",
            )
        })?;
    let (table, _) = refinement_study_min(&spec, &reference, &config.solver, 2).map_err(|e| {
        let code = match e {
            pmefv::convergence::ConvergenceError::Level { .. } | pmefv::convergence::ConvergenceError::Solver(_) => {
                EXIT_SOLVER
            }
            _ => EXIT_CONFIG,
        };
        Failure::new(code, e)
    })?;
    let dir = output_dir(out, &config);
    let written = io::write_convergence(&dir, &table).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    println!(
        "{:>5} {:>7} {:>12} {:>12} {:>12} {:>8}",
        "level", "cells", "h", "dt", "l2_error", "order"
    );
    for r in &table.rows {
        let order = r.order_l2.map_or("-".to_string(), |o| format!("{o:.3}"));
        println!(
            "{:>5} {:>7} {:>12.4e} {:>12.4e} {:>12.4e} {:>8}",
            r.level, r.cells, r.h, r.dt, r.errors.l2, order
        );
    }
    println!("wrote {}", written.display());
    let violations: usize = table.rows.iter().map(|r| r.report.violations.len()).sum();
    for r in &table.rows {
        for v in &r.report.violations {
            eprintln!("warning: level {}: {v}", r.level);
        }
    }
    if strict && violations > 0 {
        return Err(Failure::new(
            EXIT_STRICT,
            format!("{violations} estimate violation(s) in strict mode"),
        ));
    }
    Ok(())
}

fn cmd_check_mesh(file: &Path) -> Result<(), Failure> {
    let mesh = mesh::load_mesh(file).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let report = mesh::validate_admissible(&mesh);
    println!(
        "{} cells, {} interfaces, dimension {}",
        mesh.num_cells(),
        mesh.interfaces().len(),
        mesh.dim()
    );
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_FAILURE, "mesh is not admissible"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Run { config } => cmd_run(config, cli.strict, &cli.out),
        Command::Converge {
            config,
            levels,
            coupling,
        } => cmd_converge(config, *levels as usize, *coupling, cli.strict, &cli.out),
        Command::CheckMesh { file } => cmd_check_mesh(file),
        Command::Selftest => selftest::run(cli.out.as_deref()).map_err(|m| Failure::new(EXIT_FAILURE, m)),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
