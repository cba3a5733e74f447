//! Equilibrium feedback solutions for deterministic linear-quadratic control
//! problems whose costs are discounted non-exponentially, which makes the
//! problem time-inconsistent.
//!
//! The governing objects are the equilibrium Riccati equation (a
//! Riccati equation with a nonlocal integral term), the linear auxiliary
//! equations for the affine and constant parts of the value function, and
//! the resulting feedback law `ū(t,x) = −Γ(t)x − Υ(t)`.
//!
//! Typical use:
//!
//! ```no_run
//! use tilq_core::{EquilibriumSolution, SolveOptions, TimeGrid};
//! use tilq_core::io::load_problem;
//!
//! let loaded = load_problem("problems/hyperbolic_scalar_k1.json".as_ref(), false).unwrap();
//! let grid = TimeGrid::new(loaded.spec.horizon, 1000).unwrap();
//! let sol = EquilibriumSolution::solve(&loaded.spec, &grid, &SolveOptions::default()).unwrap();
//! println!("P(0) = {}", sol.riccati().p.matrix(0)[(0, 0)]);
//! ```

pub mod auxiliary;
pub(crate) mod coeffs;
mod error;
pub mod grid;
pub mod io;
pub mod iteration;
pub mod par;
pub mod policy;
pub mod problem;
pub mod riccati;
pub mod series;
pub mod verification;

pub use nalgebra;

pub use auxiliary::{solve_auxiliary, AuxiliarySolution};
pub use error::{Error, Result};
pub use grid::{TimeGrid, TransitionFlavor, TransitionTable};
pub use iteration::{InitialGuess, IterationDiagnostics, SolveOptions, SweepForm};
pub use par::Execution;
pub use policy::{ControlPolicy, EquilibriumSolution, Trajectory};

pub use problem::{
    make_discounted, validate, BaseProblem, Dimensions, DiscountKernel, DynamicsField, ProblemSpec, TerminalField,
    TimeField, TwoTimeField, ValidationReport,
};
pub use riccati::{solve_equilibrium_riccati, RiccatiSolution};
pub use series::MatrixSeries;
