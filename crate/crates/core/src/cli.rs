//! The `els` command-line driver.
//!
//! Exit status: 0 success, 1 infeasible, 2 numerical failure, 3 usage or
//! input error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cr::{CrStatus, SolverConfig};
use crate::error::{ElsError, Result};
use crate::lift::{exactness_conditions, ExactnessConditions};
use crate::minimax::parse_minimax;
use crate::problem::{matrix_from_rows, parse_error, parse_point, parse_problem, ElsProblem};
use crate::range::{probe, ProbeRow, RangeQuery};
use crate::report::{
    certify_report, minimax_report, oracle_report, relax_report, solve_report, to_json, RunOptions,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "els", version, about = "Linear optimization over the Stiefel manifold with linear side constraints")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Relative duality-gap tolerance of the barrier solver.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol: f64,
    /// Seed for oracle restarts.
    #[arg(long, global = true, env = "ELS_SEED", default_value_t = 0)]
    seed: u64,
    /// Oracle restarts.
    #[arg(long, global = true, default_value_t = 20)]
    restarts: usize,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also run the multistart oracle.
    #[arg(long, global = true)]
    with_oracle: bool,
    /// Relative eigenvalue threshold for numerical rank.
    #[arg(long, global = true, default_value_t = 1e-8)]
    rank_tol: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Relaxation, rank reduction and certificate.
    Solve { problem: PathBuf },
    /// Relaxation only.
    Relax { problem: PathBuf },
    /// Global-optimality certificate for a given point.
    Certify {
        problem: PathBuf,
        #[arg(long)]
        point: PathBuf,
    },
    /// Multistart local search.
    Oracle { problem: PathBuf },
    /// Joint numerical range probes.
    Range { query: PathBuf },
    /// Min-max of affine pieces.
    Minimax { problem: PathBuf },
    /// Dimension tests for exactness.
    CheckConditions {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        k: usize,
    },
    /// Solve every `*.json` file in a directory.
    Batch { dir: PathBuf },
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            solver: SolverConfig {
                tol: self.tol,
                seed: self.seed,
                ..SolverConfig::default()
            },
            rank_tol: self.rank_tol,
            restarts: self.restarts,
            with_oracle: self.with_oracle,
            ..RunOptions::default()
        }
    }
}

pub fn exit_code(err: &ElsError) -> i32 {
    match err {
        ElsError::Infeasible(_) | ElsError::NoFeasiblePoint { .. } => EXIT_INFEASIBLE,
        ElsError::NumericalFailure(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn status_code(status: CrStatus) -> i32 {
    match status {
        CrStatus::Optimal => EXIT_OK,
        CrStatus::Infeasible => EXIT_INFEASIBLE,
        CrStatus::NumericalFailure => EXIT_NUMERICAL,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| ElsError::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn load_problem(path: &Path) -> Result<ElsProblem> {
    parse_problem(&read(path)?)
}

#[derive(Deserialize)]
struct RawRange {
    n: usize,
    p: usize,
    #[serde(default)]
    functionals: Vec<Vec<Vec<f64>>>,
    targets: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct RangeReport {
    command: &'static str,
    n: usize,
    p: usize,
    k: usize,
    rows: Vec<ProbeRow>,
    config: RunOptions,
    timings: crate::report::Timings,
}

fn range_report(text: &str, opts: &RunOptions) -> Result<RangeReport> {
    opts.validate()?;
    let start = Instant::now();
    let raw: RawRange = serde_json::from_str(text).map_err(parse_error)?;
    let a = raw
        .functionals
        .iter()
        .enumerate()
        .map(|(i, rows)| matrix_from_rows(rows, &format!("functionals[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let queries = raw
        .targets
        .into_iter()
        .map(|t| RangeQuery::new(raw.n, raw.p, a.clone(), t))
        .collect::<Result<Vec<_>>>()?;
    let rows = queries
        .par_iter()
        .map(|q| probe(q, &opts.solver, opts.rank_tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(RangeReport {
        command: "range",
        n: raw.n,
        p: raw.p,
        k: a.len(),
        rows,
        config: opts.clone(),
        timings: crate::report::Timings {
            total_ms: start.elapsed().as_secs_f64() * 1e3,
            ..Default::default()
        },
    })
}

#[derive(Serialize)]
struct ConditionsReport {
    command: &'static str,
    n: usize,
    p: usize,
    k: usize,
    #[serde(flatten)]
    conditions: ExactnessConditions,
}

#[derive(Serialize)]
struct BatchRow {
    file: String,
    ok: bool,
    kind: Option<&'static str>,
    status: Option<CrStatus>,
    relaxation_value: Option<f64>,
    exact: Option<bool>,
    recovered_value: Option<f64>,
    oracle_value: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct BatchReport {
    command: &'static str,
    dir: String,
    instances: Vec<BatchRow>,
    config: RunOptions,
    timings: crate::report::Timings,
}

fn batch_row(path: &Path, opts: &RunOptions) -> BatchRow {
    let file = path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned());
    let mut row = BatchRow {
        file,
        ok: false,
        kind: None,
        status: None,
        relaxation_value: None,
        exact: None,
        recovered_value: None,
        oracle_value: None,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let text = read(path)?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_error)?;
        if value.get("pieces").is_some() {
            let r = minimax_report(&parse_minimax(&text)?, opts)?;
            row.kind = Some("minimax");
            row.relaxation_value = r.epigraph_value;
            row.recovered_value = r.stiefel.then_some(r.value);
            row.exact = Some(r.stiefel);
            row.oracle_value = r.oracle_value;
        } else {
            let r = solve_report(&parse_problem(&text)?, opts)?;
            row.kind = Some("problem");
            row.status = Some(r.relaxation.status);
            row.relaxation_value = Some(r.relaxation.value);
            row.exact = Some(r.exact);
            row.recovered_value = r.recovered.as_ref().map(|p| p.point.objective);
            row.oracle_value = r.oracle.as_ref().map(|o| o.value);
        }
        Ok(())
    })();
    match outcome {
        Ok(()) => row.ok = true,
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn batch_report(dir: &Path, opts: &RunOptions) -> Result<BatchReport> {
    opts.validate()?;
    let start = Instant::now();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ElsError::InvalidInput(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let instances = files.par_iter().map(|f| batch_row(f, opts)).collect();
    Ok(BatchReport {
        command: "batch",
        dir: dir.display().to_string(),
        instances,
        config: opts.clone(),
        timings: crate::report::Timings {
            total_ms: start.elapsed().as_secs_f64() * 1e3,
            ..Default::default()
        },
    })
}

/// Runs one command; returns the report text and the exit status.
fn execute(cli: &Cli) -> Result<(String, i32)> {
    let opts = cli.common.options();
    match &cli.command {
        Command::Solve { problem } => {
            let r = solve_report(&load_problem(problem)?, &opts)?;
            Ok((to_json(&r), status_code(r.relaxation.status)))
        }
        Command::Relax { problem } => {
            let r = relax_report(&load_problem(problem)?, &opts)?;
            Ok((to_json(&r), status_code(r.relaxation.status)))
        }
        Command::Certify { problem, point } => {
            let prob = load_problem(problem)?;
            let x = parse_point(&read(point)?)?;
            let r = certify_report(&prob, &x, &opts.certificate)?;
            Ok((to_json(&r), EXIT_OK))
        }
        Command::Oracle { problem } => {
            let r = oracle_report(&load_problem(problem)?, &opts)?;
            Ok((to_json(&r), EXIT_OK))
        }
        Command::Range { query } => {
            let r = range_report(&read(query)?, &opts)?;
            Ok((to_json(&r), EXIT_OK))
        }
        Command::Minimax { problem } => {
            let r = minimax_report(&parse_minimax(&read(problem)?)?, &opts)?;
            Ok((to_json(&r), EXIT_OK))
        }
        Command::CheckConditions { n, p, k } => {
            if *p == 0 || p > n {
                return Err(ElsError::validation("p", "requires 1 <= p <= n"));
            }
            let r = ConditionsReport {
                command: "check-conditions",
                n: *n,
                p: *p,
                k: *k,
                conditions: exactness_conditions(*n, *p, *k),
            };
            Ok((to_json(&r), EXIT_OK))
        }
        Command::Batch { dir } => Ok((to_json(&batch_report(dir, &opts)?), EXIT_OK)),
    }
}

/// Parses `args` (program name first), runs the command and writes the
/// report to `--out` or `stdout`. Diagnostics go to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    };
    let (text, code) = match execute(&cli) {
        Ok(v) => v,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_code(&e);
        }
    };
    let written = match &cli.common.out {
        Some(path) => fs::write(path, &text),
        None => stdout.write_all(text.as_bytes()),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: cannot write report: {e}");
        return EXIT_USAGE;
    }
    code
}
