//! Problem files in, CSV and JSON results out.

use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::iteration::SolveOptions;
use crate::problem::{validate, ProblemSpec, ValidationReport};
use crate::verification::VerifyOptions;

mod output;
mod schema;

pub use output::{
    write_compare, write_csv, write_json, write_plot_data, write_solution, write_sweep, write_verification, CompareRow,
    SweepRow,
};
pub use schema::{
    project_time_consistent, BaseCostsJson, CostsJson, DimsJson, DiscountJson, DynamicsJson, InitialJson, MatrixJson,
    ProblemFile, SolverJson, SweepJson, TimeFieldForm, TimeFieldJson, TwoTimeCostsJson, TwoTimeFieldJson, TwoTimeForm,
    DEFAULT_INTERVALS,
};

/// Environment variable that sets the output directory when `--out` is absent.
pub const OUTPUT_ENV: &str = "TILQ_OUT";
pub const DEFAULT_OUTPUT_DIR: &str = "tilq-out";

/// Sample count for the assumption checks run on load.
pub const VALIDATION_SAMPLES: usize = 100;

/// A parsed, validated problem file.
#[derive(Clone, Debug)]
pub struct LoadedProblem {
    pub path: PathBuf,
    pub file: ProblemFile,
    pub spec: ProblemSpec,
    pub solve: SolveOptions,
    pub intervals: usize,
    pub verify: VerifyOptions,
    pub initial_state: DVector<f64>,
    /// Violations accepted under `force`.
    pub validation: ValidationReport,
}

/// Reads and validates a problem file. Assumption violations are an error
/// unless `force` is set.
pub fn load_problem(path: &Path, force: bool) -> Result<LoadedProblem> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FileNotFound(path.display().to_string()));
        }
        Err(e) => return Err(e.into()),
    };
    let mut file = parse_problem_file(&text, &path.display().to_string())?;
    if file.name.is_none() {
        file.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    let mut loaded = from_file(file, force)?;
    loaded.path = path.to_path_buf();
    Ok(loaded)
}

/// Parses problem-file text; errors carry the line, column and JSON path.
pub fn parse_problem_file(text: &str, origin: &str) -> Result<ProblemFile> {
    let mut de = serde_json::Deserializer::from_str(text);
    let file: ProblemFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::ProblemFile(format!(
            "{origin}: line {}, column {}: {inner} (at `{path}`)",
            inner.line(),
            inner.column()
        ))
    })?;
    de.end().map_err(|e| Error::ProblemFile(format!("{origin}: {e}")))?;
    Ok(file)
}

/// Builds and validates the problem described by `file`.
pub fn from_file(file: ProblemFile, force: bool) -> Result<LoadedProblem> {
    let spec = file.build_spec()?;
    let report = validate(&spec, VALIDATION_SAMPLES);
    if !report.is_empty() && !force {
        return Err(Error::Validation(report));
    }
    if file.solver.intervals < 2 {
        return Err(Error::ProblemFile(format!(
            "solver.intervals must be ≥ 2, got {}",
            file.solver.intervals
        )));
    }
    Ok(LoadedProblem {
        path: PathBuf::new(),
        solve: file.solver.options()?,
        intervals: file.solver.intervals,
        verify: file.verification.clone(),
        initial_state: file.initial_state()?,
        spec,
        validation: report,
        file,
    })
}

/// Canonical JSON text of a problem file; reloading it gives an identical
/// problem.
pub fn echo_problem(file: &ProblemFile) -> Result<String> {
    Ok(serde_json::to_string_pretty(file)?)
}

/// `--out`, else `TILQ_OUT`, else [`DEFAULT_OUTPUT_DIR`].
pub fn resolve_output_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUTPUT_DIR),
    }
}
