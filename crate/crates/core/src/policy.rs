//! Value function, equilibrium feedback law, trajectories, cost and error
//! function.
//!
//! `V(t,x) = ⟨P(t)x,x⟩ + 2⟨φ(t),x⟩ + ψ(t)` with gradient `2P(t)x + 2φ(t)` and
//! feedback `ū(t,x) = −Γ(t)x − Υ(t)`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::auxiliary::{affine_drift, solve_auxiliary_with, walk_btilde, AuxiliarySolution};
use crate::coeffs::GridCoefficients;
use crate::error::{Error, Result};
use crate::grid::{DynamicsSamples, TimeGrid};
use crate::iteration::SolveOptions;
use crate::problem::ProblemSpec;
use crate::riccati::{solve_with_coeffs, RiccatiSolution};
use crate::series::MatrixSeries;

/// A control rule for simulation on the grid.
pub trait ControlPolicy: Sync {
    /// Control used during step `k` (from `t_k` to `t_{k+1}`) at time
    /// `t ∈ [t_k, t_{k+1}]` and state `x`.
    fn control(&self, k: usize, t: f64, x: &DVector<f64>) -> DVector<f64>;
}

/// Feedback given by a closure of `(t, x)`.
pub struct Feedback<F>(pub F);

impl<F> ControlPolicy for Feedback<F>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64> + Sync,
{
    fn control(&self, _k: usize, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.0)(t, x)
    }
}

/// Open-loop control tabulated at nodes, interpolated linearly in time.
pub struct OpenLoop {
    grid: TimeGrid,
    values: MatrixSeries,
}

impl OpenLoop {
    pub fn new(grid: &TimeGrid, values: &[DVector<f64>]) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "open-loop table has {} entries for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let mats: Vec<DMatrix<f64>> = values
            .iter()
            .map(|v| DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
            .collect();
        Ok(Self {
            grid: *grid,
            values: MatrixSeries::from_matrices(&mats)?,
        })
    }
}

impl ControlPolicy for OpenLoop {
    fn control(&self, _k: usize, t: f64, _x: &DVector<f64>) -> DVector<f64> {
        let (i, a) = self.grid.locate(t).unwrap_or((self.grid.intervals(), 0.0));
        DVector::from_column_slice(self.values.lerp(i, a).as_slice())
    }
}

/// Control constant on runs of grid steps: `values[i]` is applied on steps
/// `breaks[i]..breaks[i+1]`, the last value until the end.
#[derive(Clone, Debug)]
pub struct PiecewiseConstant {
    pub breaks: Vec<usize>,
    pub values: Vec<DVector<f64>>,
}

impl ControlPolicy for PiecewiseConstant {
    fn control(&self, k: usize, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
        let seg = self.breaks.partition_point(|&b| b <= k).saturating_sub(1);
        self.values[seg.min(self.values.len() - 1)].clone()
    }
}

/// Constant `v` on steps `start..end`, then another policy.
pub struct Spliced<'a, P: ControlPolicy + ?Sized> {
    pub start: usize,
    pub end: usize,
    pub v: DVector<f64>,
    pub after: &'a P,
}

impl<P: ControlPolicy + ?Sized> ControlPolicy for Spliced<'_, P> {
    fn control(&self, k: usize, t: f64, x: &DVector<f64>) -> DVector<f64> {
        if k >= self.start && k < self.end {
            self.v.clone()
        } else {
            self.after.control(k, t, x)
        }
    }
}

/// States and controls at the nodes `start..start+len`.
///
/// Controls may jump at nodes, so each node stores the control used on the
/// step that begins there (`controls`) and on the step that ends there
/// (`controls_left`). Both coincide for continuous feedback along smooth
/// trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub start: usize,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub controls_left: Vec<DVector<f64>>,
}

impl Trajectory {
    /// Index of the last node covered.
    pub fn end(&self) -> usize {
        self.start + self.states.len() - 1
    }

    pub fn state_at(&self, node: usize) -> &DVector<f64> {
        &self.states[node - self.start]
    }

    pub fn is_finite(&self) -> bool {
        self.states
            .iter()
            .chain(&self.controls)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

fn drift(a: &[f64], b: &[f64], bias: &[f64], x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let m = u.len();
    DVector::from_fn(n, |i, _| {
        let mut v = bias[i];
        for j in 0..n {
            v += a[j * n + i] * x[j];
        }
        for j in 0..m {
            v += b[j * n + i] * u[j];
        }
        v
    })
}

pub(crate) fn simulate_samples(
    dyn_: &DynamicsSamples,
    grid: &TimeGrid,
    policy: &(impl ControlPolicy + ?Sized),
    start: usize,
    end: usize,
    x: &DVector<f64>,
) -> Trajectory {
    let h = grid.step();
    let mut states = vec![x.clone()];
    let mut controls = Vec::with_capacity(end - start + 1);
    let mut controls_left = Vec::with_capacity(end - start + 1);
    let mut y = x.clone();
    for k in start..end {
        let (t0, tm, t1) = (grid.node(k), grid.midpoint(k), grid.node(k + 1));
        let u1 = policy.control(k, t0, &y);
        let k1 = drift(dyn_.a.slice(k), dyn_.b.slice(k), dyn_.bias.slice(k), &y, &u1);
        let y2 = &y + &k1 * (0.5 * h);
        let u2 = policy.control(k, tm, &y2);
        let k2 = drift(
            dyn_.a_mid.slice(k),
            dyn_.b_mid.slice(k),
            dyn_.bias_mid.slice(k),
            &y2,
            &u2,
        );
        let y3 = &y + &k2 * (0.5 * h);
        let u3 = policy.control(k, tm, &y3);
        let k3 = drift(
            dyn_.a_mid.slice(k),
            dyn_.b_mid.slice(k),
            dyn_.bias_mid.slice(k),
            &y3,
            &u3,
        );
        let y4 = &y + &k3 * h;
        let u4 = policy.control(k, t1, &y4);
        let k4 = drift(
            dyn_.a.slice(k + 1),
            dyn_.b.slice(k + 1),
            dyn_.bias.slice(k + 1),
            &y4,
            &u4,
        );
        let next = &y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if controls_left.is_empty() {
            controls_left.push(u1.clone());
        }
        controls.push(u1);
        controls_left.push(policy.control(k, t1, &next));
        states.push(next.clone());
        y = next;
    }
    if end == start {
        let k = start.min(grid.intervals().saturating_sub(1));
        let u = policy.control(k, grid.node(start), &y);
        controls_left.push(u.clone());
        controls.push(u);
    } else {
        let k = end.min(grid.intervals());
        let u = if k < grid.intervals() {
            policy.control(k, grid.node(end), &y)
        } else {
            controls_left.last().cloned().expect("non-empty")
        };
        controls.push(u);
    }
    Trajectory {
        start,
        states,
        controls,
        controls_left,
    }
}

/// RK4 solution of the controlled system from `(t_start, x)` to `T`; the
/// policy is evaluated at every Runge–Kutta stage.
pub fn simulate_control(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    policy: &(impl ControlPolicy + ?Sized),
    start: usize,
    x: &DVector<f64>,
) -> Result<Trajectory> {
    simulate_control_until(spec, grid, policy, start, grid.intervals(), x)
}

/// As [`simulate_control`], stopping at node `end`.
pub fn simulate_control_until(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    policy: &(impl ControlPolicy + ?Sized),
    start: usize,
    end: usize,
    x: &DVector<f64>,
) -> Result<Trajectory> {
    if start > end || end > grid.intervals() {
        return Err(Error::InvalidArgument(format!(
            "simulation range {start}..{end} outside the grid"
        )));
    }
    if x.len() != spec.dims.n {
        return Err(Error::Shape(format!(
            "state has length {}, expected {}",
            x.len(),
            spec.dims.n
        )));
    }
    let dyn_ = DynamicsSamples::new(&spec.dynamics, grid);
    Ok(simulate_samples(&dyn_, grid, policy, start, end, x))
}

/// Kernel values at one `(t, s)` pair, column-major.
pub(crate) struct KernelValues {
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub q_lin: DMatrix<f64>,
    pub rho: DMatrix<f64>,
}

impl KernelValues {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            q: DMatrix::zeros(n, n),
            s: DMatrix::zeros(m, n),
            m: DMatrix::zeros(m, m),
            q_lin: DMatrix::zeros(n, 1),
            rho: DMatrix::zeros(m, 1),
        }
    }

    pub fn values(&mut self, spec: &ProblemSpec, t: f64, s: f64) -> &Self {
        let c = &spec.costs;
        c.q.value_into(t, s, self.q.as_mut_slice());
        c.s.value_into(t, s, self.s.as_mut_slice());
        c.m.value_into(t, s, self.m.as_mut_slice());
        c.q_lin.value_into(t, s, self.q_lin.as_mut_slice());
        c.rho.value_into(t, s, self.rho.as_mut_slice());
        self
    }

    pub fn derivatives(&mut self, spec: &ProblemSpec, t: f64, s: f64) -> &Self {
        let c = &spec.costs;
        c.q.dt_into(t, s, self.q.as_mut_slice());
        c.s.dt_into(t, s, self.s.as_mut_slice());
        c.m.dt_into(t, s, self.m.as_mut_slice());
        c.q_lin.dt_into(t, s, self.q_lin.as_mut_slice());
        c.rho.dt_into(t, s, self.rho.as_mut_slice());
        self
    }

    /// `⟨Qy,y⟩ + 2⟨Sy,u⟩ + ⟨Mu,u⟩ + 2⟨q,y⟩ + 2⟨ρ,u⟩`.
    pub fn lagrangian(&self, y: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let qy = &self.q * y;
        let sy = &self.s * y;
        let mu = &self.m * u;
        qy.dot(y) + 2.0 * sy.dot(u) + mu.dot(u) + 2.0 * self.q_lin.column(0).dot(y) + 2.0 * self.rho.column(0).dot(u)
    }
}

/// Trapezoid quadrature of `f(k, y_k, u)` over the trajectory, using the
/// one-sided controls on each step.
pub(crate) fn integrate_along(
    grid: &TimeGrid,
    traj: &Trajectory,
    mut f: impl FnMut(usize, &DVector<f64>, &DVector<f64>) -> f64,
) -> f64 {
    let half = 0.5 * grid.step();
    let mut acc = 0.0;
    for l in 0..traj.states.len() - 1 {
        let k = traj.start + l;
        acc += half
            * (f(k, &traj.states[l], &traj.controls[l]) + f(k + 1, &traj.states[l + 1], &traj.controls_left[l + 1]));
    }
    acc
}

/// `J(t,x;u)` along a trajectory starting at node `t_idx` and ending at `T`,
/// with all weights frozen at the evaluation time `t = t_idx`.
pub fn cost(spec: &ProblemSpec, grid: &TimeGrid, traj: &Trajectory, t_idx: usize) -> Result<f64> {
    if traj.start != t_idx || traj.end() != grid.intervals() {
        return Err(Error::InvalidArgument(format!(
            "trajectory covers nodes {}..={}, expected {t_idx}..={}",
            traj.start,
            traj.end(),
            grid.intervals()
        )));
    }
    let t = grid.node(t_idx);
    let (n, m) = (spec.dims.n, spec.dims.m);
    let mut kv = KernelValues::zeros(n, m);
    let running = integrate_along(grid, traj, |k, y, u| kv.values(spec, t, grid.node(k)).lagrangian(y, u));
    let yt = traj.states.last().expect("non-empty");
    let g = spec.terminal.g.eval(t);
    let gl = spec.terminal.g_lin.eval(t);
    Ok(running + (g * yt).dot(yt) + 2.0 * gl.column(0).dot(yt))
}

/// Equilibrium solution: Riccati and auxiliary data with the problem and grid.
pub struct EquilibriumSolution {
    spec: ProblemSpec,
    grid: TimeGrid,
    pub(crate) coeffs: GridCoefficients,
    riccati: RiccatiSolution,
    auxiliary: AuxiliarySolution,
}

impl std::fmt::Debug for EquilibriumSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EquilibriumSolution")
            .field("problem", &self.spec.name)
            .field("grid", &self.grid)
            .finish_non_exhaustive()
    }
}

impl EquilibriumSolution {
    /// Solves the Riccati equation and then the auxiliary system.
    pub fn solve(spec: &ProblemSpec, grid: &TimeGrid, opts: &SolveOptions) -> Result<Self> {
        let coeffs = GridCoefficients::new(spec, grid)?;
        let riccati = solve_with_coeffs(spec, &coeffs, opts)?;
        let auxiliary = solve_auxiliary_with(spec, &coeffs, &riccati, opts)?;
        Ok(Self {
            spec: spec.clone(),
            grid: *grid,
            coeffs,
            riccati,
            auxiliary,
        })
    }

    pub fn from_parts(
        spec: &ProblemSpec,
        grid: &TimeGrid,
        riccati: RiccatiSolution,
        auxiliary: AuxiliarySolution,
    ) -> Result<Self> {
        let len = grid.len();
        if riccati.p.len() != len || auxiliary.phi.len() != len {
            return Err(Error::Shape("solution tables were computed on a different grid".into()));
        }
        if !riccati.diagnostics.iteration.converged || !auxiliary.diagnostics.phi_iteration.converged {
            return Err(Error::InvalidArgument("solution components are not converged".into()));
        }
        Ok(Self {
            spec: spec.clone(),
            grid: *grid,
            coeffs: GridCoefficients::new(spec, grid)?,
            riccati,
            auxiliary,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn riccati(&self) -> &RiccatiSolution {
        &self.riccati
    }

    pub fn auxiliary(&self) -> &AuxiliarySolution {
        &self.auxiliary
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.spec.dims.n {
            return Err(Error::Shape(format!(
                "state has length {}, expected {}",
                x.len(),
                self.spec.dims.n
            )));
        }
        Ok(())
    }

    /// Interpolated `(P, φ, ψ)` at `t`.
    fn parts(&self, t: f64) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
        let (i, a) = self.grid.locate(t)?;
        let p = self.riccati.p.lerp(i, a);
        let phi = DVector::from_column_slice(self.auxiliary.phi.lerp(i, a).as_slice());
        let psi = &self.auxiliary.psi;
        let ps = if a == 0.0 {
            psi[i]
        } else {
            (1.0 - a) * psi[i] + a * psi[i + 1]
        };
        Ok((p, phi, ps))
    }

    /// `V(t,x) = ⟨P(t)x,x⟩ + 2⟨φ(t),x⟩ + ψ(t)`.
    pub fn value(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        self.check_state(x)?;
        let (p, phi, psi) = self.parts(t)?;
        Ok((&p * x).dot(x) + 2.0 * phi.dot(x) + psi)
    }

    /// `∇V(t,x) = 2P(t)x + 2φ(t)`.
    pub fn grad_value(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        let (p, phi, _) = self.parts(t)?;
        Ok((&p * x + phi) * 2.0)
    }

    /// `ū(t,x) = −M(t,t)⁻¹(½B(t)ᵀ∇V(t,x) + S(t,t)x + ρ(t,t))`.
    pub fn feedback(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let grad = self.grad_value(t, x)?;
        let c = &self.spec.costs;
        let m = c.m.value(t, t);
        let chol = Cholesky::new((&m + m.transpose()) * 0.5).ok_or(Error::NotPositiveDefinite { t })?;
        let rhs = self.spec.dynamics.b.eval(t).transpose() * &grad * 0.5 + c.s.value(t, t) * x + c.rho.value(t, t);
        let u = -DVector::from_column_slice(chol.solve(&rhs).as_slice());
        #[cfg(debug_assertions)]
        if let Ok((_, 0.0)) = self.grid.locate(t) {
            let alt = self.feedback_gain_form(t, x)?;
            debug_assert!(
                (&u - &alt).amax() <= 1e-10 * (1.0 + u.amax()),
                "feedback forms disagree at t = {t}"
            );
        }
        Ok(u)
    }

    /// `ū(t,x) = −Γ(t)x − Υ(t)` with interpolated gains.
    pub fn feedback_gain_form(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        let (i, a) = self.grid.locate(t)?;
        let g = self.riccati.gamma.lerp(i, a);
        let ups = self.auxiliary.upsilon.lerp(i, a);
        Ok(-(g * x) - DVector::from_column_slice(ups.as_slice()))
    }

    fn node_feedback(&self, k: usize, y: &DVector<f64>) -> DVector<f64> {
        -(self.riccati.gamma.view(k) * y) - self.auxiliary.upsilon.vector(k)
    }

    /// Equilibrium state `Y(s_i) = 𝔼(s_i,t)x + b̃(s_i,t)` from the stored
    /// closed-loop data; controls from the feedback law at the nodes.
    pub fn simulate_equilibrium(&self, t_idx: usize, x: &DVector<f64>) -> Result<Trajectory> {
        self.check_state(x)?;
        if t_idx > self.grid.intervals() {
            return Err(Error::InvalidArgument(format!("node {t_idx} outside the grid")));
        }
        let n = self.spec.dims.n;
        let c = affine_drift(&self.coeffs, &self.auxiliary.upsilon);
        let mut states = Vec::with_capacity(self.grid.len() - t_idx);
        walk_btilde(
            t_idx,
            self.riccati.closed_loop.factors(),
            &c,
            self.grid.step(),
            |_, e, bt| {
                let e = DMatrix::from_column_slice(n, n, e);
                states.push(e * x + DVector::from_column_slice(bt));
            },
        );
        let controls: Vec<DVector<f64>> = states
            .iter()
            .enumerate()
            .map(|(l, y)| self.node_feedback(t_idx + l, y))
            .collect();
        Ok(Trajectory {
            start: t_idx,
            controls_left: controls.clone(),
            states,
            controls,
        })
    }

    /// Equilibrium error function evaluated from its definition
    /// `R(t,x) = ⟨Ġ(t)Y(T) + 2ġ(t), Y(T)⟩ + ∫_t^T ⟨Q_tY + 2q_t, Y⟩ + ⟨M_tū + 2S_tY + 2ρ_t, ū⟩ ds`
    /// along the equilibrium trajectory from `(t_idx, x)`.
    pub fn error_function_direct(&self, t_idx: usize, x: &DVector<f64>) -> Result<f64> {
        let traj = self.simulate_equilibrium(t_idx, x)?;
        Ok(self.error_function_along(t_idx, &traj))
    }

    pub(crate) fn error_function_along(&self, t_idx: usize, traj: &Trajectory) -> f64 {
        let t = self.grid.node(t_idx);
        let (n, m) = (self.spec.dims.n, self.spec.dims.m);
        let mut kv = KernelValues::zeros(n, m);
        let running = integrate_along(&self.grid, traj, |k, y, u| {
            kv.derivatives(&self.spec, t, self.grid.node(k)).lagrangian(y, u)
        });
        let yt = traj.states.last().expect("non-empty");
        let gd = self.coeffs.g_dt.view(t_idx);
        let gld = self.coeffs.g_lin_dt.view(t_idx);
        running + (gd * yt).dot(yt) + 2.0 * gld.column(0).dot(yt)
    }

    /// `R(t,x) = ⟨ℚ(t)x,x⟩ + 2⟨𝕊(t),x⟩ + ω(t)` from the stored tables.
    pub fn error_function_closed(&self, t_idx: usize, x: &DVector<f64>) -> Result<f64> {
        self.check_state(x)?;
        if t_idx > self.grid.intervals() {
            return Err(Error::InvalidArgument(format!("node {t_idx} outside the grid")));
        }
        let q = self.riccati.qbb.view(t_idx);
        let s = self.auxiliary.sbb.view(t_idx);
        Ok((q * x).dot(x) + 2.0 * s.column(0).dot(x) + self.auxiliary.omega[t_idx])
    }
}

impl ControlPolicy for EquilibriumSolution {
    fn control(&self, _k: usize, t: f64, x: &DVector<f64>) -> DVector<f64> {
        self.feedback_gain_form(t, x).expect("time within the horizon")
    }
}
