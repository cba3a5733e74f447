//! Coefficient data of the control problem.
//!
//! Dynamics `ẏ = A(s)y + B(s)u + b(s)` on `[t, T]` with cost, evaluated at
//! time `t`,
//!
//! ```text
//! J(t,x;u) = ∫_t^T ⟨Q(t,s)y,y⟩ + 2⟨S(t,s)y,u⟩ + ⟨M(t,s)u,u⟩ + 2⟨q(t,s),y⟩ + 2⟨ρ(t,s),u⟩ ds
//!            + ⟨G(t)y(T),y(T)⟩ + 2⟨g(t),y(T)⟩.
//! ```
//!
//! The dependence of the weights on `t` is what makes the problem
//! time-inconsistent; every two-time field carries its `t`-derivative.

mod fields;
mod kernel;
mod table;
mod validate;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use fields::{TimeField, TwoTimeField};
pub use kernel::DiscountKernel;
pub use table::{finite_diff_t, TabulatedValues, TimeTable, TwoTimeTable};
pub use validate::{validate, validate_with, ValidationOptions, ValidationReport, Violation};

/// State dimension `n` and control dimension `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dimensions {
    pub n: usize,
    pub m: usize,
}

impl Dimensions {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be positive, got n={n}, m={m}"
            )));
        }
        Ok(Self { n, m })
    }
}

/// `A(s)` (n×n), `B(s)` (n×m), `b(s)` (n×1).
#[derive(Clone, Debug)]
pub struct DynamicsField {
    pub a: TimeField,
    pub b: TimeField,
    pub bias: TimeField,
}

/// The five running-cost kernels.
#[derive(Clone, Debug)]
pub struct CostFields {
    /// n×n
    pub q: TwoTimeField,
    /// m×n
    pub s: TwoTimeField,
    /// m×m
    pub m: TwoTimeField,
    /// n×1
    pub q_lin: TwoTimeField,
    /// m×1
    pub rho: TwoTimeField,
}

/// Terminal weights `G(t)`, `g(t)` and their derivatives.
#[derive(Clone, Debug)]
pub struct TerminalField {
    pub g: TimeField,
    pub g_dt: TimeField,
    pub g_lin: TimeField,
    pub g_lin_dt: TimeField,
}

impl TerminalField {
    /// Terminal weights without dependence on the evaluation time.
    pub fn constant(g: DMatrix<f64>, g_lin: DVector<f64>) -> Self {
        let n = g.nrows();
        Self {
            g: TimeField::Constant(g),
            g_dt: TimeField::zeros(n, n),
            g_lin: TimeField::Constant(DMatrix::from_column_slice(n, 1, g_lin.as_slice())),
            g_lin_dt: TimeField::zeros(n, 1),
        }
    }

    /// Derivatives obtained from [`TimeField::derivative`].
    pub fn from_values(g: TimeField, g_lin: TimeField) -> Result<Self> {
        Ok(Self {
            g_dt: g.derivative()?,
            g_lin_dt: g_lin.derivative()?,
            g,
            g_lin,
        })
    }
}

/// The complete problem data.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub name: String,
    pub description: String,
    pub dims: Dimensions,
    pub horizon: f64,
    pub dynamics: DynamicsField,
    pub costs: CostFields,
    pub terminal: TerminalField,
}

impl ProblemSpec {
    /// Checks shapes and the horizon. Square weights that are symmetric up to
    /// roundoff are symmetrized.
    pub fn new(
        dims: Dimensions,
        horizon: f64,
        dynamics: DynamicsField,
        costs: CostFields,
        terminal: TerminalField,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        let Dimensions { n, m } = dims;
        let check = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            }
        };
        check("A", dynamics.a.shape(), (n, n))?;
        check("B", dynamics.b.shape(), (n, m))?;
        check("b", dynamics.bias.shape(), (n, 1))?;
        check("Q", costs.q.shape(), (n, n))?;
        check("S", costs.s.shape(), (m, n))?;
        check("M", costs.m.shape(), (m, m))?;
        check("q", costs.q_lin.shape(), (n, 1))?;
        check("rho", costs.rho.shape(), (m, 1))?;
        check("G", terminal.g.shape(), (n, n))?;
        check("dG/dt", terminal.g_dt.shape(), (n, n))?;
        check("g", terminal.g_lin.shape(), (n, 1))?;
        check("dg/dt", terminal.g_lin_dt.shape(), (n, 1))?;
        let costs = CostFields {
            q: costs.q.symmetrized(),
            m: costs.m.symmetrized(),
            ..costs
        };
        let terminal = TerminalField {
            g: terminal.g.symmetrized(),
            g_dt: terminal.g_dt.symmetrized(),
            ..terminal
        };
        Ok(Self {
            name: String::new(),
            description: String::new(),
            dims,
            horizon,
            dynamics,
            costs,
            terminal,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>, description: impl Into<String>) -> Self {
        self.name = name.into();
        self.description = description.into();
        self
    }

    /// True when every first-argument derivative vanishes by construction.
    pub fn is_structurally_time_consistent(&self) -> bool {
        let c = &self.costs;
        [&c.q, &c.s, &c.m, &c.q_lin, &c.rho].iter().all(|f| f.dt_vanishes())
            && self.terminal.g_dt.is_zero()
            && self.terminal.g_lin_dt.is_zero()
    }

    /// Largest absolute value of any t-derivative field over a sample grid.
    pub fn max_time_derivative(&self, samples: usize) -> f64 {
        let samples = samples.max(2);
        let ts: Vec<f64> = (0..samples)
            .map(|i| self.horizon * i as f64 / (samples - 1) as f64)
            .collect();
        let c = &self.costs;
        let mut worst = 0.0f64;
        for (i, &t) in ts.iter().enumerate() {
            for &s in &ts[i..] {
                for f in [&c.q, &c.s, &c.m, &c.q_lin, &c.rho] {
                    worst = worst.max(f.dvalue_dt(t, s).amax());
                }
            }
            worst = worst.max(self.terminal.g_dt.eval(t).amax());
            worst = worst.max(self.terminal.g_lin_dt.eval(t).amax());
        }
        worst
    }
}

/// Time-indexed base coefficients from which discounted two-time kernels are
/// built: `Q(t,s) = λ(t,s) Q̂(s)` and so on.
#[derive(Clone, Debug)]
pub struct BaseProblem {
    pub dims: Dimensions,
    pub horizon: f64,
    pub dynamics: DynamicsField,
    pub q: TimeField,
    pub s: TimeField,
    pub m: TimeField,
    pub q_lin: TimeField,
    pub rho: TimeField,
    pub g: DMatrix<f64>,
    pub g_lin: DVector<f64>,
}

impl BaseProblem {
    /// Scalar base problem with constant coefficients.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        horizon: f64,
        a: f64,
        b: f64,
        bias: f64,
        q: f64,
        s: f64,
        m: f64,
        q_lin: f64,
        rho: f64,
        g: f64,
        g_lin: f64,
    ) -> Self {
        let c = |x: f64| TimeField::Constant(DMatrix::from_element(1, 1, x));
        Self {
            dims: Dimensions { n: 1, m: 1 },
            horizon,
            dynamics: DynamicsField {
                a: c(a),
                b: c(b),
                bias: c(bias),
            },
            q: c(q),
            s: c(s),
            m: c(m),
            q_lin: c(q_lin),
            rho: c(rho),
            g: DMatrix::from_element(1, 1, g),
            g_lin: DVector::from_element(1, g_lin),
        }
    }

    /// The problem without discounting: kernels depend on `s` only.
    pub fn undiscounted(&self) -> Result<ProblemSpec> {
        let n = self.dims.n;
        ProblemSpec::new(
            self.dims,
            self.horizon,
            self.dynamics.clone(),
            CostFields {
                q: TwoTimeField::Running(self.q.clone()),
                s: TwoTimeField::Running(self.s.clone()),
                m: TwoTimeField::Running(self.m.clone()),
                q_lin: TwoTimeField::Running(self.q_lin.clone()),
                rho: TwoTimeField::Running(self.rho.clone()),
            },
            TerminalField::constant(self.g.clone(), DVector::from_column_slice(&self.g_lin.as_slice()[..n])),
        )
    }
}

/// Builds the separable-kernel problem `value(t,s) = λ(t,s)·base(s)`,
/// `G(t) = λ(t,T)Ĝ`, `g(t) = λ(t,T)ĝ`, with matching derivatives.
pub fn make_discounted(base: &BaseProblem, kernel: &DiscountKernel) -> Result<ProblemSpec> {
    kernel.validate()?;
    let n = base.dims.n;
    let two = |f: &TimeField| TwoTimeField::Discounted {
        kernel: kernel.clone(),
        base: f.clone(),
    };
    let term = |m: DMatrix<f64>, derivative: bool| TimeField::Discounted {
        kernel: kernel.clone(),
        anchor: base.horizon,
        base: m,
        derivative,
    };
    let g_lin = DMatrix::from_column_slice(n, 1, base.g_lin.as_slice());
    ProblemSpec::new(
        base.dims,
        base.horizon,
        base.dynamics.clone(),
        CostFields {
            q: two(&base.q),
            s: two(&base.s),
            m: two(&base.m),
            q_lin: two(&base.q_lin),
            rho: two(&base.rho),
        },
        TerminalField {
            g: term(base.g.clone(), false),
            g_dt: term(base.g.clone(), true),
            g_lin: term(g_lin.clone(), false),
            g_lin_dt: term(g_lin, true),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_zero_gives_exact_zero_derivatives() {
        let base = BaseProblem::scalar(1.0, 0.1, 1.0, 0.5, 1.0, 0.2, 1.0, 0.3, 0.1, 1.0, 0.5);
        let spec = make_discounted(&base, &DiscountKernel::Exponential { delta: 0.0 }).unwrap();
        assert!(spec.is_structurally_time_consistent());
        assert_eq!(spec.costs.q.dvalue_dt(0.2, 0.7)[(0, 0)], 0.0);
        assert_eq!(spec.terminal.g_dt.eval(0.3)[(0, 0)], 0.0);
    }

    #[test]
    fn discounted_terminal_weights() {
        let base = BaseProblem::scalar(2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 3.0, 1.0);
        let spec = make_discounted(&base, &DiscountKernel::Exponential { delta: 0.5 }).unwrap();
        let e1 = (-1.0f64).exp();
        assert!((spec.terminal.g.eval(0.0)[(0, 0)] - 3.0 * e1).abs() < 1e-15);
        assert!((spec.terminal.g_dt.eval(0.0)[(0, 0)] - 1.5 * e1).abs() < 1e-15);
        assert!((spec.terminal.g_lin.eval(0.0)[(0, 0)] - e1).abs() < 1e-15);
        assert_eq!(spec.terminal.g.eval(2.0)[(0, 0)], 3.0);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut base = BaseProblem::scalar(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0);
        base.q = TimeField::zeros(2, 2);
        assert!(matches!(base.undiscounted(), Err(Error::Shape(_))));
    }
}
