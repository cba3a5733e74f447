//! Solver options and the damped fixed-point driver shared by the Riccati and
//! auxiliary solvers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::DEFAULT_DENSE_BUDGET;
use crate::par::Execution;
use crate::series::MatrixSeries;

/// Smallest damping factor the schedule halves down to.
pub const MIN_DAMPING: f64 = 0.0625;

/// Consecutive decreases after which a halved damping factor is doubled again.
const RECOVERY_RUN: usize = 4;

/// Starting table for the Riccati iteration.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialGuess {
    /// `P ≡ G(T)`.
    Terminal,
    Zero,
    /// `P ≡ c·G(T)`.
    ScaledTerminal(f64),
    /// Values at every grid node.
    Table(MatrixSeries),
}

/// Which integral representation of `P` one sweep evaluates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepForm {
    /// Propagate with the closed-loop transition of the current gain and the
    /// quadratic-in-gain integrand. One sweep is a policy-evaluation step, so
    /// the iteration behaves like Newton's method on the Riccati equation.
    #[default]
    ClosedLoop,
    /// Propagate with the open-loop transition `E` and integrand
    /// `Q − ℚ − ΓᵀMΓ`. A plain Picard map; it can diverge from starting
    /// tables far above the solution.
    OpenLoop,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Sup-norm threshold on the change produced by one sweep.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial damping θ ∈ (0, 1].
    pub damping: f64,
    pub initial: InitialGuess,
    pub sweep: SweepForm,
    pub execution: Execution,
    /// Entry budget for all-pairs transition and b̃ tables.
    pub dense_budget: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 200,
            damping: 1.0,
            initial: InitialGuess::Terminal,
            sweep: SweepForm::ClosedLoop,
            execution: Execution::default(),
            dense_budget: DEFAULT_DENSE_BUDGET,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Record of a fixed-point run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IterationDiagnostics {
    pub iterations: usize,
    /// `sup |sweep(P_k) − P_k|` per iteration.
    pub deltas: Vec<f64>,
    /// Damping factor used at each iteration.
    pub damping: Vec<f64>,
    pub converged: bool,
    /// Number of times the iterate was reset to the best one seen.
    pub restarts: usize,
}

impl IterationDiagnostics {
    pub fn last_delta(&self) -> f64 {
        self.deltas.last().copied().unwrap_or(f64::NAN)
    }
}

/// Iterates `X ← (1−θ)X + θ·sweep(X)` until `sup |sweep(X) − X| ≤ tol` and
/// returns the last sweep output.
///
/// θ is halved (down to [`MIN_DAMPING`]) when the delta grows twice in a row or
/// a sweep produces non-finite values; on each halving the iterate is reset to
/// the one with the smallest delta seen so far. After a run of decreasing
/// deltas θ is doubled back towards its initial value. `pin` restores entries that
/// must hold exactly (terminal conditions) after blending.
pub(crate) fn damped_fixed_point(
    what: &'static str,
    init: MatrixSeries,
    opts: &SolveOptions,
    mut sweep: impl FnMut(&MatrixSeries) -> Result<MatrixSeries>,
    pin: impl Fn(&mut MatrixSeries),
) -> Result<(MatrixSeries, IterationDiagnostics)> {
    opts.validate()?;
    let mut diag = IterationDiagnostics::default();
    let mut current = init;
    let mut theta = opts.damping;
    let mut best: Option<(f64, MatrixSeries)> = None;
    let mut prev = f64::INFINITY;
    let mut growth = 0usize;
    let mut calm = 0usize;

    while diag.iterations < opts.max_iterations {
        diag.iterations += 1;
        let out = sweep(&current)?;
        let delta = if out.is_finite() {
            out.sup_distance(&current)
        } else {
            f64::INFINITY
        };
        diag.deltas.push(delta);
        diag.damping.push(theta);
        if delta <= opts.tolerance {
            diag.converged = true;
            return Ok((out, diag));
        }
        if delta.is_finite() && best.as_ref().is_none_or(|(d, _)| delta < *d) {
            best = Some((delta, current.clone()));
        }
        growth = if delta > prev { growth + 1 } else { 0 };
        calm = if delta < prev { calm + 1 } else { 0 };
        if calm >= RECOVERY_RUN && theta < opts.damping {
            theta = (theta * 2.0).min(opts.damping);
            calm = 0;
        }
        if !delta.is_finite() || growth >= 2 {
            if theta <= MIN_DAMPING && !delta.is_finite() {
                break;
            }
            if theta > MIN_DAMPING {
                theta = (theta * 0.5).max(MIN_DAMPING);
                growth = 0;
                calm = 0;
                if let Some((d, x)) = &best {
                    current = x.clone();
                    prev = *d;
                    diag.restarts += 1;
                    continue;
                }
            }
        }
        if !delta.is_finite() {
            break;
        }
        current.blend(&out, theta);
        pin(&mut current);
        prev = delta;
    }
    Err(Error::NoConvergence {
        what,
        diagnostics: Box::new(diag),
    })
}
