//! The equilibrium Riccati equation
//!
//! ```text
//! Ṗ + AᵀP + PA + Q(t,t) − ℚ − ΓᵀM(t,t)Γ = 0,   P(T) = G(T),
//! Γ = M(t,t)⁻¹(BᵀP + S(t,t)),
//! ℚ(t) = 𝔼(T,t)ᵀĠ(t)𝔼(T,t) + ∫_t^T 𝔼(s,t)ᵀ[Q_t − ΓᵀS_t − S_tᵀΓ + ΓᵀM_tΓ](t,s) 𝔼(s,t) ds,
//! ```
//!
//! where `𝔼` is the transition matrix of `A − BΓ`. Because `ℚ(t)` depends on
//! the gain over `[t, T]`, the equation is nonlocal; it is solved as a fixed
//! point of one of its integral representations.

use nalgebra::{Cholesky, DMatrix};
use serde::Serialize;

use crate::coeffs::GridCoefficients;
use crate::error::{Error, Result};
use crate::grid::{step_factors, TimeGrid, TransitionFlavor, TransitionTable};
use crate::iteration::{damped_fixed_point, InitialGuess, IterationDiagnostics, SolveOptions, SweepForm};
use crate::par::{map_range, Execution};
use crate::problem::ProblemSpec;
use crate::series::{add_congruence, matmul, symmetrize, tmatmul, MatrixSeries};

#[derive(Clone, Debug, Default, Serialize)]
pub struct RiccatiDiagnostics {
    pub iteration: IterationDiagnostics,
    pub sweep: SweepForm,
    /// Largest relative asymmetry of a sweep output before symmetrization.
    pub max_asymmetry: f64,
    pub warnings: Vec<String>,
}

/// Converged equilibrium Riccati data on a grid.
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub p: MatrixSeries,
    pub gamma: MatrixSeries,
    pub qbb: MatrixSeries,
    pub closed_loop: TransitionTable,
    pub diagnostics: RiccatiDiagnostics,
}

/// `Γ = M(t,t)⁻¹(BᵀP + S(t,t))` by Cholesky solve.
pub fn gamma_from_p(p: &DMatrix<f64>, spec: &ProblemSpec, t: f64) -> Result<DMatrix<f64>> {
    let m = spec.costs.m.value(t, t);
    let m = (&m + m.transpose()) * 0.5;
    let chol = Cholesky::new(m).ok_or(Error::NotPositiveDefinite { t })?;
    let rhs = spec.dynamics.b.eval(t).transpose() * p + spec.costs.s.value(t, t);
    Ok(chol.solve(&rhs))
}

pub(crate) struct RiccatiEngine<'a> {
    pub spec: &'a ProblemSpec,
    pub coeffs: &'a GridCoefficients,
    pub exec: Execution,
    q_dt: bool,
    s_dt: bool,
    m_dt: bool,
}

impl<'a> RiccatiEngine<'a> {
    pub fn new(spec: &'a ProblemSpec, coeffs: &'a GridCoefficients, exec: Execution) -> Self {
        let c = &spec.costs;
        Self {
            spec,
            coeffs,
            exec,
            q_dt: !c.q.dt_vanishes(),
            s_dt: !c.s.dt_vanishes(),
            m_dt: !c.m.dt_vanishes(),
        }
    }

    fn grid(&self) -> &TimeGrid {
        &self.coeffs.grid
    }

    pub fn closed_factors(&self, gamma: &MatrixSeries) -> MatrixSeries {
        step_factors(&self.coeffs.dynamics, gamma, self.grid().step())
    }

    /// `ℚ(t_j)` with the closed loop given by one-step factors.
    pub fn qbb_node(&self, j: usize, gamma: &MatrixSeries, factors: &MatrixSeries) -> Vec<f64> {
        let (n, m) = (self.coeffs.n, self.coeffs.m);
        let grid = self.grid();
        let last = grid.intervals();
        let tj = grid.node(j);
        let costs = &self.spec.costs;
        let mut acc = vec![0.0; n * n];
        let mut e = vec![0.0; n * n];
        crate::series::identity_into(&mut e, n);
        let mut next = vec![0.0; n * n];
        let mut kern = vec![0.0; n * n];
        let mut qt = vec![0.0; n * n];
        let mut st = vec![0.0; m * n];
        let mut mt = vec![0.0; m * m];
        let mut x = vec![0.0; n * n];
        let mut mg = vec![0.0; m * n];
        let mut tmp = vec![0.0; n * n];
        let integrand = self.q_dt || self.s_dt || self.m_dt;
        for k in j..=last {
            let w = grid.weight(j, last, k);
            if integrand && w > 0.0 {
                let tk = grid.node(k);
                let g = gamma.slice(k);
                kern.iter_mut().for_each(|v| *v = 0.0);
                if self.q_dt {
                    costs.q.dt_into(tj, tk, &mut qt);
                    kern.copy_from_slice(&qt);
                }
                if self.s_dt {
                    costs.s.dt_into(tj, tk, &mut st);
                    tmatmul(g, m, n, &st, n, &mut x);
                    for r in 0..n {
                        for c in 0..n {
                            kern[c * n + r] -= x[c * n + r] + x[r * n + c];
                        }
                    }
                }
                if self.m_dt {
                    costs.m.dt_into(tj, tk, &mut mt);
                    matmul(&mt, m, m, g, n, &mut mg);
                    tmatmul(g, m, n, &mg, n, &mut x);
                    kern.iter_mut().zip(&x).for_each(|(a, b)| *a += b);
                }
                add_congruence(w, &e, n, n, &kern, &mut tmp, &mut acc);
            }
            if k < last {
                matmul(factors.slice(k), n, n, &e, n, &mut next);
                std::mem::swap(&mut e, &mut next);
            }
        }
        add_congruence(1.0, &e, n, n, self.coeffs.g_dt.slice(j), &mut tmp, &mut acc);
        symmetrize(&mut acc, n);
        acc
    }

    pub fn qbb_all(&self, gamma: &MatrixSeries, factors: &MatrixSeries) -> MatrixSeries {
        let n = self.coeffs.n;
        let len = self.grid().len();
        if self.coeffs.quadratic_consistent {
            return MatrixSeries::zeros(len, n, n);
        }
        let rows = map_range(self.exec, 0..len, |j| self.qbb_node(j, gamma, factors));
        MatrixSeries::from_flat(len, n, n, rows.concat())
    }

    /// Backward trapezoid recursion for
    /// `P(t_i) = F(N,i)ᵀG(T)F(N,i) + ∫ F(τ,i)ᵀ f(τ) F(τ,i) dτ`
    /// given one-step factors `F` and integrand samples `f`.
    /// Returns the table and the largest relative asymmetry before symmetrization.
    fn integral_form(&self, factors: &MatrixSeries, f: &MatrixSeries) -> (MatrixSeries, f64) {
        let n = self.coeffs.n;
        let len = self.grid().len();
        let half = 0.5 * self.grid().step();
        let mut out = MatrixSeries::zeros(len, n, n);
        out.slice_mut(len - 1).copy_from_slice(self.coeffs.g.slice(len - 1));
        let mut x = vec![0.0; n * n];
        let mut tmp = vec![0.0; n * n];
        let mut worst = 0.0f64;
        for i in (0..len - 1).rev() {
            for ((xe, pe), fe) in x.iter_mut().zip(out.slice(i + 1)).zip(f.slice(i + 1)) {
                *xe = pe + half * fe;
            }
            let mut acc: Vec<f64> = f.slice(i).iter().map(|v| half * v).collect();
            add_congruence(1.0, factors.slice(i), n, n, &x, &mut tmp, &mut acc);
            let scale = acc.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let asym = symmetrize(&mut acc, n);
            if scale > 0.0 {
                worst = worst.max(asym / scale);
            }
            out.slice_mut(i).copy_from_slice(&acc);
        }
        (out, worst)
    }

    /// `ΓᵀMΓ` and `Q − ΓᵀS − SᵀΓ + ΓᵀMΓ` at node `i`, diagonal kernels.
    fn gain_terms(&self, i: usize, gamma: &MatrixSeries) -> (DMatrix<f64>, DMatrix<f64>) {
        let c = self.coeffs;
        let g = gamma.view(i);
        let gmg = g.transpose() * c.m_diag.view(i) * g;
        let gs = g.transpose() * c.s.view(i);
        let closed = c.q.view(i) - &gs - gs.transpose() + &gmg;
        (gmg, closed)
    }

    /// One sweep: gain from `p_in`, closed loop, ℚ, then the chosen integral form.
    pub fn sweep(&self, p_in: &MatrixSeries, form: SweepForm, open: Option<&MatrixSeries>) -> (MatrixSeries, f64) {
        let n = self.coeffs.n;
        let len = self.grid().len();
        let gamma = self.coeffs.gains(p_in);
        let closed = self.closed_factors(&gamma);
        let qbb = self.qbb_all(&gamma, &closed);
        let mut f = MatrixSeries::zeros(len, n, n);
        for i in 0..len {
            let (gmg, closed_cost) = self.gain_terms(i, &gamma);
            let fi = match form {
                SweepForm::OpenLoop => self.coeffs.q.view(i) - qbb.view(i) - gmg,
                SweepForm::ClosedLoop => closed_cost - qbb.view(i),
            };
            f.set(i, &fi);
        }
        match form {
            SweepForm::ClosedLoop => self.integral_form(&closed, &f),
            SweepForm::OpenLoop => {
                let owned;
                let open = match open {
                    Some(o) => o,
                    None => {
                        owned = self.open_factors();
                        &owned
                    }
                };
                self.integral_form(open, &f)
            }
        }
    }

    pub fn open_factors(&self) -> MatrixSeries {
        let (n, m) = (self.coeffs.n, self.coeffs.m);
        step_factors(
            &self.coeffs.dynamics,
            &MatrixSeries::zeros(self.grid().len(), m, n),
            self.grid().step(),
        )
    }
}

/// `ℚ(t_i)` from a gain table and the closed-loop transition built from it.
pub fn qbb_from_gamma(
    gamma: &MatrixSeries,
    closed: &TransitionTable,
    spec: &ProblemSpec,
    grid: &TimeGrid,
    i: usize,
) -> Result<DMatrix<f64>> {
    if i >= grid.len() || closed.nodes() != grid.len() || gamma.len() != grid.len() {
        return Err(Error::Shape("gain, transition table and grid disagree".into()));
    }
    let coeffs = GridCoefficients::new(spec, grid)?;
    let engine = RiccatiEngine::new(spec, &coeffs, Execution::Sequential);
    let n = spec.dims.n;
    Ok(DMatrix::from_column_slice(
        n,
        n,
        &engine.qbb_node(i, gamma, closed.factors()),
    ))
}

/// One sweep of the open-loop integral form
/// `P_out(t) = E(T,t)ᵀG(T)E(T,t) + ∫_t^T E(τ,t)ᵀ[Q(τ,τ) − ℚ(τ) − ΓᵀMΓ(τ)]E(τ,t) dτ`.
pub fn riccati_sweep(p_in: &MatrixSeries, spec: &ProblemSpec, grid: &TimeGrid) -> Result<MatrixSeries> {
    riccati_sweep_with(p_in, spec, grid, SweepForm::OpenLoop, Execution::default())
}

pub fn riccati_sweep_with(
    p_in: &MatrixSeries,
    spec: &ProblemSpec,
    grid: &TimeGrid,
    form: SweepForm,
    exec: Execution,
) -> Result<MatrixSeries> {
    let n = spec.dims.n;
    if p_in.len() != grid.len() || p_in.shape() != (n, n) {
        return Err(Error::Shape("P table does not match grid and state dimension".into()));
    }
    let coeffs = GridCoefficients::new(spec, grid)?;
    let engine = RiccatiEngine::new(spec, &coeffs, exec);
    Ok(engine.sweep(p_in, form, None).0)
}

fn initial_table(init: &InitialGuess, coeffs: &GridCoefficients) -> Result<MatrixSeries> {
    let n = coeffs.n;
    let len = coeffs.grid.len();
    let g_t = coeffs.g.slice(len - 1).to_vec();
    Ok(match init {
        InitialGuess::Terminal => MatrixSeries::from_fn(len, n, n, |_, o| o.copy_from_slice(&g_t)),
        InitialGuess::Zero => MatrixSeries::zeros(len, n, n),
        InitialGuess::ScaledTerminal(c) => {
            MatrixSeries::from_fn(len, n, n, |_, o| o.iter_mut().zip(&g_t).for_each(|(a, b)| *a = c * b))
        }
        InitialGuess::Table(t) => {
            if t.len() != len || t.shape() != (n, n) {
                return Err(Error::Shape(
                    "initial P table does not match grid and state dimension".into(),
                ));
            }
            t.clone()
        }
    })
}

/// Damped fixed-point solve of the equilibrium Riccati equation.
pub fn solve_equilibrium_riccati(spec: &ProblemSpec, grid: &TimeGrid, opts: &SolveOptions) -> Result<RiccatiSolution> {
    let coeffs = GridCoefficients::new(spec, grid)?;
    solve_with_coeffs(spec, &coeffs, opts)
}

pub(crate) fn solve_with_coeffs(
    spec: &ProblemSpec,
    coeffs: &GridCoefficients,
    opts: &SolveOptions,
) -> Result<RiccatiSolution> {
    opts.validate()?;
    let engine = RiccatiEngine::new(spec, coeffs, opts.execution);
    let len = coeffs.grid.len();
    let n = coeffs.n;
    let terminal = coeffs.g.slice(len - 1).to_vec();
    let open = match opts.sweep {
        SweepForm::OpenLoop => Some(engine.open_factors()),
        SweepForm::ClosedLoop => None,
    };
    let mut max_asym = 0.0f64;
    let mut init = initial_table(&opts.initial, coeffs)?;
    init.slice_mut(len - 1).copy_from_slice(&terminal);
    let (p, iteration) = damped_fixed_point(
        "equilibrium Riccati iteration",
        init,
        opts,
        |p| {
            let (out, asym) = engine.sweep(p, opts.sweep, open.as_ref());
            max_asym = max_asym.max(asym);
            Ok(out)
        },
        |p| p.slice_mut(len - 1).copy_from_slice(&terminal),
    )?;

    let gamma = coeffs.gains(&p);
    let factors = engine.closed_factors(&gamma);
    let qbb = engine.qbb_all(&gamma, &factors);
    let closed_loop = TransitionTable::from_factors(TransitionFlavor::ClosedLoop, factors, opts.dense_budget);

    let mut warnings = Vec::new();
    if max_asym > 1e-8 {
        warnings.push(format!(
            "sweep output asymmetry {max_asym:e} exceeds 1e-8 before symmetrization"
        ));
    }
    for i in 0..len {
        let pi = p.matrix(i);
        let min = pi.clone().symmetric_eigenvalues().min();
        if min < -1e-8 * pi.amax().max(1.0) {
            warnings.push(format!(
                "P(t) is not positive semi-definite at t = {} (smallest eigenvalue {min:e})",
                coeffs.grid.node(i)
            ));
            break;
        }
    }
    debug_assert_eq!(p.slice(len - 1), &terminal[..n * n]);
    Ok(RiccatiSolution {
        p,
        gamma,
        qbb,
        closed_loop,
        diagnostics: RiccatiDiagnostics {
            iteration,
            sweep: opts.sweep,
            max_asymmetry: max_asym,
            warnings,
        },
    })
}

/// Backward RK4 for the classical Riccati equation
/// `Ṗ + AᵀP + PA + Q − ΓᵀMΓ = 0`, `P(T) = G(T)`, valid only when the problem
/// is time-consistent.
pub fn classical_riccati(spec: &ProblemSpec, grid: &TimeGrid) -> Result<MatrixSeries> {
    if !spec.is_structurally_time_consistent() {
        let worst = spec.max_time_derivative(grid.len().min(101));
        if worst > 1e-12 {
            return Err(Error::NotTimeConsistent(format!(
                "largest t-derivative of the weights is {worst:e}"
            )));
        }
    }
    let n = spec.dims.n;
    let rhs = |t: f64, p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let a = spec.dynamics.a.eval(t);
        let gamma = gamma_from_p(p, spec, t)?;
        let m = spec.costs.m.value(t, t);
        let q = spec.costs.q.value(t, t);
        Ok(-(a.transpose() * p + p * &a + q - gamma.transpose() * m * &gamma))
    };
    let len = grid.len();
    let h = grid.step();
    let mut out = MatrixSeries::zeros(len, n, n);
    let mut p = spec.terminal.g.eval(spec.horizon);
    out.set(len - 1, &p);
    for i in (0..len - 1).rev() {
        let (t1, tm, t0) = (grid.node(i + 1), grid.midpoint(i), grid.node(i));
        let k1 = rhs(t1, &p)?;
        let k2 = rhs(tm, &(&p - &k1 * (0.5 * h)))?;
        let k3 = rhs(tm, &(&p - &k2 * (0.5 * h)))?;
        let k4 = rhs(t0, &(&p - &k3 * h))?;
        p -= (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        p = (&p + p.transpose()) * 0.5;
        out.set(i, &p);
    }
    Ok(out)
}
