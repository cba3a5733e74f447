//! `tilq` command-line front end: solve, verify, compare and sweep problem
//! files, writing CSV tables and a JSON summary.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use tilq_core::io::{
    echo_problem, load_problem, resolve_output_dir, write_compare, write_json, write_solution, write_sweep,
    write_verification, CompareRow, LoadedProblem, SweepRow,
};
use tilq_core::riccati::classical_riccati;
use tilq_core::verification::verify;
use tilq_core::{EquilibriumSolution, Error, TimeGrid};

#[derive(Debug, Parser)]
#[command(
    name = "tilq",
    version,
    about = "Equilibrium feedback for time-inconsistent linear-quadratic problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Riccati, auxiliary and policy tables.
    Solve(CommonArgs),
    /// Solve, then run the full verification battery.
    Verify(CommonArgs),
    /// Equilibrium P against the classical Riccati solution of the
    /// time-consistent projection.
    Compare(CommonArgs),
    /// Solve across the discount-parameter list in the problem file.
    Sweep(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Problem file (JSON).
    pub problem: PathBuf,
    /// Number of grid intervals.
    #[arg(short = 'N', long = "grid")]
    pub grid: Option<usize>,
    /// Fixed-point tolerance (sup norm).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Seed for verification sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; falls back to $TILQ_OUT, then `tilq-out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Proceed even when the problem violates the model assumptions.
    #[arg(long)]
    pub force: bool,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Solve(_) => "solve",
            Self::Verify(_) => "verify",
            Self::Compare(_) => "compare",
            Self::Sweep(_) => "sweep",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Self::Solve(a) | Self::Verify(a) | Self::Compare(a) | Self::Sweep(a) => a,
        }
    }
}

/// Failures reported as JSON on stderr.
#[derive(Debug)]
pub enum CliError {
    Core(Error),
    VerificationFailed { checks: Vec<String>, out: PathBuf },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(_) => 1,
            Self::VerificationFailed { .. } => 2,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Self::Core(e) => json!({ "error": { "kind": e.kind(), "message": e.to_string() } }),
            Self::VerificationFailed { checks, out } => json!({
                "error": {
                    "kind": "verification_failed",
                    "message": format!("failed checks: {}", checks.join(", ")),
                    "failed_checks": checks,
                    "output_dir": out.display().to_string(),
                }
            }),
        }
    }
}

/// Result of a successful command.
#[derive(Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub summary: Value,
}

struct Job {
    loaded: LoadedProblem,
    grid: TimeGrid,
    out: PathBuf,
    command: &'static str,
}

fn prepare(cmd: &Command) -> Result<Job, CliError> {
    let a = cmd.args();
    let mut loaded = load_problem(&a.problem, a.force)?;
    if let Some(n) = a.grid {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("-N must be ≥ 2, got {n}")).into());
        }
        loaded.intervals = n;
        loaded.file.solver.intervals = n;
    }
    if let Some(tol) = a.tol {
        loaded.solve.tolerance = tol;
        loaded.file.solver.tolerance = tol;
        loaded.solve.validate()?;
    }
    if let Some(seed) = a.seed {
        loaded.verify.seed = seed;
        loaded.file.verification.seed = seed;
    }
    let grid = TimeGrid::new(loaded.spec.horizon, loaded.intervals)?;
    let out = resolve_output_dir(a.out.as_deref());
    fs::create_dir_all(&out)?;
    Ok(Job {
        loaded,
        grid,
        out,
        command: cmd.name(),
    })
}

fn base_summary(job: &Job) -> Value {
    let l = &job.loaded;
    json!({
        "command": job.command,
        "problem": l.spec.name,
        "problem_file": l.path.display().to_string(),
        "intervals": job.grid.intervals(),
        "horizon": job.grid.horizon(),
        "tolerance": l.solve.tolerance,
        "sweep_form": l.solve.sweep,
        "seed": l.verify.seed,
        "time_consistent": l.spec.is_structurally_time_consistent(),
        "assumption_warnings": l.validation.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
    })
}

fn solution_summary(sol: &EquilibriumSolution, x0: &tilq_core::nalgebra::DVector<f64>) -> Result<Value, CliError> {
    let r = sol.riccati();
    let a = sol.auxiliary();
    let p0 = r.p.matrix(0);
    Ok(json!({
        "P0": p0.row_iter().map(|row| row.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        "x0": x0.as_slice(),
        "V0": sol.value(0.0, x0)?,
        "riccati": r.diagnostics,
        "auxiliary": a.diagnostics,
    }))
}

fn file_names(files: &[PathBuf], root: &Path) -> Vec<String> {
    files
        .iter()
        .map(|p| p.strip_prefix(root).unwrap_or(p).display().to_string())
        .collect()
}

fn finish(job: &Job, mut summary: Value, mut files: Vec<PathBuf>) -> Result<Outcome, CliError> {
    let echo = job.out.join("problem_echo.json");
    fs::write(&echo, echo_problem(&job.loaded.file)? + "\n")?;
    files.push(echo);
    let summary_path = job.out.join("summary.json");
    files.push(summary_path.clone());
    summary["files"] = json!(file_names(&files, &job.out));
    write_json(&summary_path, &summary)?;
    Ok(Outcome {
        out_dir: job.out.clone(),
        summary,
    })
}

fn solve_cmd(job: &Job) -> Result<(EquilibriumSolution, Value, Vec<PathBuf>), CliError> {
    let l = &job.loaded;
    let sol = EquilibriumSolution::solve(&l.spec, &job.grid, &l.solve)?;
    let files = write_solution(&job.out, &sol, &l.initial_state)?;
    let mut summary = base_summary(job);
    summary["solution"] = solution_summary(&sol, &l.initial_state)?;
    Ok((sol, summary, files))
}

fn verify_cmd(job: &Job) -> Result<Outcome, CliError> {
    let (sol, mut summary, mut files) = solve_cmd(job)?;
    let l = &job.loaded;
    let report = verify(&sol, &l.verify, &l.solve)?;
    files.extend(write_verification(&job.out, &report)?);
    summary["checks"] = json!(report
        .checks
        .iter()
        .map(|c| json!({ "name": c.name, "passed": c.passed, "value": c.value, "tolerance": c.tolerance }))
        .collect::<Vec<_>>());
    summary["passed"] = json!(report.passed());
    summary["notes"] = json!(report.notes);
    let outcome = finish(job, summary, files)?;
    if !report.passed() {
        return Err(CliError::VerificationFailed {
            checks: report.failed().map(|c| c.name.clone()).collect(),
            out: job.out.clone(),
        });
    }
    Ok(outcome)
}

fn row_major(m: &tilq_core::nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.row_iter()
        .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
        .collect()
}

fn compare_cmd(job: &Job) -> Result<Outcome, CliError> {
    let l = &job.loaded;
    let grid = &job.grid;
    let projected = l.file.time_consistent_projection()?;
    let classical = classical_riccati(&projected, grid)?;
    let equilibrium = EquilibriumSolution::solve(&l.spec, grid, &l.solve)?;
    let projected_eq = tilq_core::solve_equilibrium_riccati(&projected, grid, &l.solve)?;
    let p = &equilibrium.riccati().p;
    let rows: Vec<CompareRow> = (0..grid.len())
        .map(|i| CompareRow {
            t: grid.node(i),
            equilibrium: row_major(&p.matrix(i)),
            classical: row_major(&classical.matrix(i)),
        })
        .collect();
    let path = write_compare(&job.out, l.spec.dims.n, &rows)?;
    let mut summary = base_summary(job);
    summary["solution"] = solution_summary(&equilibrium, &l.initial_state)?;
    summary["max_abs_difference"] = json!(p.sup_distance(&classical));
    summary["projection_self_check"] = json!(projected_eq.p.sup_distance(&classical));
    finish(job, summary, vec![path])
}

fn sweep_cmd(job: &Job) -> Result<Outcome, CliError> {
    let l = &job.loaded;
    let sweep = l
        .file
        .sweep
        .as_ref()
        .ok_or_else(|| Error::ProblemFile("`sweep` needs a `sweep.values` list in the problem file".into()))?;
    let disc = l
        .file
        .discount
        .as_ref()
        .ok_or_else(|| Error::ProblemFile("`sweep` needs a parametric `discount` in the problem file".into()))?;
    let name = match &sweep.parameter {
        Some(p) => p.clone(),
        None => disc
            .parameters()
            .first()
            .ok_or_else(|| Error::ProblemFile("tabulated discount has no sweepable parameter".into()))?
            .to_string(),
    };
    let mut rows = Vec::new();
    for &value in &sweep.values {
        let kernel = disc.with_parameter(&name, value)?.kernel()?;
        let spec = l.file.build_spec_with(Some(&kernel))?;
        let sol = EquilibriumSolution::solve(&spec, &job.grid, &l.solve)?;
        rows.push(SweepRow {
            parameter: value,
            p0: row_major(&sol.riccati().p.matrix(0)),
            value0: sol.value(0.0, &l.initial_state)?,
            iterations: sol.riccati().diagnostics.iteration.iterations,
        });
    }
    let path = write_sweep(&job.out, &name, l.spec.dims.n, &rows)?;
    let mut summary = base_summary(job);
    summary["parameter"] = json!(name);
    summary["x0"] = json!(l.initial_state.as_slice());
    summary["sweep"] = json!(rows);
    finish(job, summary, vec![path, job.out.join("plot").join("sweep_V0.dat")])
}

/// Runs one parsed command.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let job = prepare(&cli.command)?;
    match &cli.command {
        Command::Solve(_) => {
            let (_, summary, files) = solve_cmd(&job)?;
            finish(&job, summary, files)
        }
        Command::Verify(_) => verify_cmd(&job),
        Command::Compare(_) => compare_cmd(&job),
        Command::Sweep(_) => sweep_cmd(&job),
    }
}

/// Parses `args`, runs, prints the summary (stdout) or an error JSON
/// (stderr), and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(o) => {
            println!("{}", serde_json::to_string_pretty(&o.summary).unwrap_or_default());
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
