use thiserror::Error;

use crate::iteration::IterationDiagnostics;
use crate::problem::ValidationReport;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid discount kernel: {0}")]
    InvalidKernel(String),

    #[error("H1 violated: M({t}, {t}) is not positive definite")]
    NotPositiveDefinite { t: f64 },

    #[error("problem is not time-consistent: {0}")]
    NotTimeConsistent(String),

    #[error("{what} did not converge after {} iterations (last delta {:e})", .diagnostics.iterations, .diagnostics.last_delta())]
    NoConvergence {
        what: &'static str,
        diagnostics: Box<IterationDiagnostics>,
    },

    #[error("problem violates the model assumptions:\n{0}")]
    Validation(ValidationReport),

    #[error("problem file: {0}")]
    ProblemFile(String),

    #[error("file not found: {0}")]
    FileNotFound(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable snake-case identifier for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidArgument(_) => "invalid_argument",
            Self::Shape(_) => "shape_mismatch",
            Self::InvalidKernel(_) => "invalid_kernel",
            Self::NotPositiveDefinite { .. } => "not_positive_definite",
            Self::NotTimeConsistent(_) => "not_time_consistent",
            Self::NoConvergence { .. } => "no_convergence",
            Self::Validation(_) => "validation_failed",
            Self::ProblemFile(_) => "problem_file",
            Self::FileNotFound(_) => "file_not_found",
            Self::Io(_) => "io",
            Self::Csv(_) => "csv",
            Self::Json(_) => "json",
        }
    }
}
