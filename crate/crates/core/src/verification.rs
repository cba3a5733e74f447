//! Numerical checks of the equilibrium properties: spike variations, the
//! equilibrium Bellman principle, pointwise and integral HJB residuals, the
//! representation `V = J(·,·;ū)` and uniqueness across initial guesses.
//!
//! The time derivative `V_t` is always assembled from the right-hand sides of
//! the P, φ and ψ equations at a node, never by differencing in time.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::iteration::{InitialGuess, SolveOptions};
use crate::par::{map_range, Execution};
use crate::policy::{
    cost, integrate_along, simulate_control, simulate_control_until, ControlPolicy, EquilibriumSolution, KernelValues,
    PiecewiseConstant, Spliced,
};
use crate::problem::ProblemSpec;

/// Sampling and tolerance settings for [`verify`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    pub seed: u64,
    /// States are drawn uniformly from `[−state_scale, state_scale]ⁿ`.
    pub state_scale: f64,
    /// Candidate controls are drawn from `[−2, 2]ᵐ · control_scale`.
    pub control_scale: f64,
    pub value_probes: usize,
    pub gradient_probes: usize,
    pub error_probes: usize,
    pub spike_probes: usize,
    pub bellman_candidates: usize,
    /// States per probe time for the HJB residuals.
    pub hjb_states: usize,
    /// Absolute bound on both HJB residual sups, scaled by `1 + |V|`.
    pub hjb_tolerance: f64,
    pub uniqueness: bool,
    pub execution: Execution,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            state_scale: 1.0,
            control_scale: 1.0,
            value_probes: 50,
            gradient_probes: 100,
            error_probes: 50,
            spike_probes: 30,
            bellman_candidates: 100,
            hjb_states: 4,
            hjb_tolerance: 1e-3,
            uniqueness: true,
            execution: Execution::default(),
        }
    }
}

pub const VALUE_TOL: f64 = 1e-3;
pub const GRADIENT_TOL: f64 = 1e-6;
pub const FEEDBACK_TOL: f64 = 1e-10;
pub const ERROR_FUNCTION_TOL: f64 = 1e-4;
pub const SPIKE_FLOOR: f64 = -1e-4;
pub const SPIKE_ZERO_TOL: f64 = 1e-4;
pub const SPIKE_RELATIVE_TOL: f64 = 0.01;
pub const BELLMAN_FLOOR: f64 = -1e-4;
pub const BELLMAN_EQUALITY_TOL: f64 = 1e-4;
/// Number of probe times `kT/10`, `k = 0..10`, for the HJB residuals.
pub const HJB_TIMES: usize = 10;
/// Number of constant pieces in a random Bellman candidate.
pub const CANDIDATE_PIECES: usize = 8;

/// Where a check attained its worst value.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
}

impl Witness {
    fn at(t: f64, x: &DVector<f64>) -> Self {
        Self {
            t,
            x: x.as_slice().to_vec(),
            ..Self::default()
        }
    }
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub tolerance: f64,
    pub witness: Witness,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub note: String,
}

/// Spike-variation probe at `(t, x, v)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpikeReport {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// Realized ε values (whole grid steps), strictly decreasing.
    pub epsilons: Vec<f64>,
    pub quotients: Vec<f64>,
    pub extrapolated: f64,
    /// `V_t + ⟨∇V, Ax+Bv+b⟩ + L(t,x,v) − R(t,x)`.
    pub analytic: f64,
    /// `⟨M(t,t)(v−ū), v−ū⟩`.
    pub reference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BellmanSample {
    pub t: f64,
    pub s: f64,
    pub x: Vec<f64>,
    pub residual: f64,
    pub equilibrium_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HjbSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub pointwise: f64,
    pub integral: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub inits: Vec<String>,
    pub p_distance: f64,
    pub value_distance: f64,
    pub iterations: Vec<usize>,
}

/// Everything [`verify`] measured.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub intervals: usize,
    pub checks: Vec<Check>,
    pub spikes: Vec<SpikeReport>,
    pub bellman: Vec<BellmanSample>,
    pub hjb: Vec<HjbSample>,
    pub hjb_residual_sup: f64,
    pub hjb_integral_residual_sup: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniqueness: Option<UniquenessReport>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn check_node(sol: &EquilibriumSolution, t_idx: usize, x: &DVector<f64>) -> Result<()> {
    if t_idx > sol.grid().intervals() {
        return Err(Error::InvalidArgument(format!("node {t_idx} outside the grid")));
    }
    if x.len() != sol.spec().dims.n {
        return Err(Error::Shape(format!(
            "state has length {}, expected {}",
            x.len(),
            sol.spec().dims.n
        )));
    }
    Ok(())
}

/// `(Ṗ, φ̇, ψ̇)` at node `i` from the equation right-hand sides.
pub fn value_derivatives(sol: &EquilibriumSolution, i: usize) -> (DMatrix<f64>, DVector<f64>, f64) {
    let c = &sol.coeffs;
    let r = sol.riccati();
    let aux = sol.auxiliary();
    let a = c.dynamics.a.view(i);
    let b = c.dynamics.b.view(i);
    let bias = c.dynamics.bias.vector(i);
    let p = r.p.view(i);
    let gamma = r.gamma.view(i);
    let m = c.m_diag.view(i);
    let phi = aux.phi.vector(i);
    let ups = aux.upsilon.vector(i);
    let rho = c.rho.vector(i);

    let pdot = -(a.transpose() * p + p * a + c.q.view(i) - r.qbb.view(i) - gamma.transpose() * m * gamma);
    let closed = a - b * gamma;
    let phidot =
        -(closed.transpose() * &phi - aux.sbb.vector(i) + p * &bias + c.q_lin.vector(i) - gamma.transpose() * &rho);
    let drift = &bias - b * &ups;
    let psidot = -(2.0 * phi.dot(&drift) - aux.omega[i] + (m * &ups - &rho * 2.0).dot(&ups));
    (pdot, phidot, psidot)
}

/// `V_t(t_i, x) = ⟨Ṗx,x⟩ + 2⟨φ̇,x⟩ + ψ̇`.
pub fn value_time_derivative(sol: &EquilibriumSolution, t_idx: usize, x: &DVector<f64>) -> Result<f64> {
    check_node(sol, t_idx, x)?;
    let (pdot, phidot, psidot) = value_derivatives(sol, t_idx);
    Ok((pdot * x).dot(x) + 2.0 * phidot.dot(x) + psidot)
}

/// Diagonal running cost `L(τ,τ,y,u)` at node `k`.
fn diagonal_lagrangian(sol: &EquilibriumSolution, k: usize, y: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let c = &sol.coeffs;
    (c.q.view(k) * y).dot(y)
        + 2.0 * (c.s.view(k) * y).dot(u)
        + (c.m_diag.view(k) * u).dot(u)
        + 2.0 * c.q_lin.vector(k).dot(y)
        + 2.0 * c.rho.vector(k).dot(u)
}

/// `V_t + ⟨∇V, Ax+Bv+b⟩ + L(t,t,x,v) − R(t,x)` at node `t_idx`, with `R`
/// from the closed form.
pub fn spike_limit_analytic(
    sol: &EquilibriumSolution,
    t_idx: usize,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    check_node(sol, t_idx, x)?;
    let r = sol.error_function_closed(t_idx, x)?;
    hamiltonian_form(sol, t_idx, x, v, r)
}

fn hamiltonian_form(
    sol: &EquilibriumSolution,
    t_idx: usize,
    x: &DVector<f64>,
    v: &DVector<f64>,
    r: f64,
) -> Result<f64> {
    if v.len() != sol.spec().dims.m {
        return Err(Error::Shape(format!(
            "control has length {}, expected {}",
            v.len(),
            sol.spec().dims.m
        )));
    }
    let c = &sol.coeffs;
    let t = sol.grid().node(t_idx);
    let vt = value_time_derivative(sol, t_idx, x)?;
    let grad = sol.grad_value(t, x)?;
    let dx = c.dynamics.a.view(t_idx) * x + c.dynamics.b.view(t_idx) * v + c.dynamics.bias.vector(t_idx);
    Ok(vt + grad.dot(&dx) + diagonal_lagrangian(sol, t_idx, x, v) - r)
}

fn steps_for(grid: &TimeGrid, eps: f64) -> usize {
    (eps / grid.step()).round() as usize
}

/// `(J(t,x;u^{ε,v}) − J(t,x;ū))/ε`, where `u^{ε,v}` applies `v` on
/// `[t, t+ε]` and the equilibrium feedback afterwards. ε is rounded to a whole
/// number of grid steps.
pub fn spike_quotient(
    sol: &EquilibriumSolution,
    t_idx: usize,
    x: &DVector<f64>,
    v: &DVector<f64>,
    eps: f64,
) -> Result<f64> {
    let base = equilibrium_cost(sol, t_idx, x)?;
    spike_quotient_from(sol, t_idx, x, v, eps, base)
}

fn equilibrium_cost(sol: &EquilibriumSolution, t_idx: usize, x: &DVector<f64>) -> Result<f64> {
    check_node(sol, t_idx, x)?;
    let traj = simulate_control(sol.spec(), sol.grid(), sol, t_idx, x)?;
    cost(sol.spec(), sol.grid(), &traj, t_idx)
}

fn spike_quotient_from(
    sol: &EquilibriumSolution,
    t_idx: usize,
    x: &DVector<f64>,
    v: &DVector<f64>,
    eps: f64,
    base: f64,
) -> Result<f64> {
    let grid = sol.grid();
    let steps = steps_for(grid, eps);
    if !(eps.is_finite() && eps > 0.0) || steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "spike width {eps} is below two grid steps (h = {})",
            grid.step()
        )));
    }
    if t_idx + steps > grid.intervals() {
        return Err(Error::InvalidArgument(format!(
            "spike [{}, {}] leaves the horizon",
            grid.node(t_idx),
            grid.node(t_idx) + eps
        )));
    }
    if v.len() != sol.spec().dims.m {
        return Err(Error::Shape(format!(
            "control has length {}, expected {}",
            v.len(),
            sol.spec().dims.m
        )));
    }
    let spliced = Spliced {
        start: t_idx,
        end: t_idx + steps,
        v: v.clone(),
        after: sol,
    };
    let traj = simulate_control(sol.spec(), grid, &spliced, t_idx, x)?;
    let j = cost(sol.spec(), grid, &traj, t_idx)?;
    Ok((j - base) / (steps as f64 * grid.step()))
}

/// `{T/50, T/100, T/200, T/400}`.
pub fn spike_schedule(horizon: f64) -> Vec<f64> {
    [50.0, 100.0, 200.0, 400.0].iter().map(|d| horizon / d).collect()
}

/// Whether every ε of the schedule spans two or more whole steps, with the
/// realized widths strictly decreasing.
pub fn spike_schedule_resolvable(grid: &TimeGrid) -> bool {
    let steps: Vec<usize> = spike_schedule(grid.horizon())
        .iter()
        .map(|&e| steps_for(grid, e))
        .collect();
    steps.iter().all(|&k| k >= 2) && steps.windows(2).all(|w| w[1] < w[0]) && steps[0] < grid.intervals()
}

/// Limit of `q(ε) = q₀ + c·ε` through the two smallest ε.
pub fn richardson_first_order(epsilons: &[f64], quotients: &[f64]) -> Result<f64> {
    if epsilons.len() != quotients.len() || epsilons.len() < 2 {
        return Err(Error::InvalidArgument(
            "Richardson extrapolation needs two or more (ε, q) pairs".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..epsilons.len()).collect();
    idx.sort_by(|&a, &b| epsilons[a].total_cmp(&epsilons[b]));
    let (e1, q1) = (epsilons[idx[0]], quotients[idx[0]]);
    let (e2, q2) = (epsilons[idx[1]], quotients[idx[1]]);
    if e1 == e2 {
        return Err(Error::InvalidArgument(
            "Richardson extrapolation needs distinct ε".into(),
        ));
    }
    Ok((e2 * q1 - e1 * q2) / (e2 - e1))
}

/// Runs the full ε schedule at `(t, x, v)`.
pub fn spike_probe(sol: &EquilibriumSolution, t_idx: usize, x: &DVector<f64>, v: &DVector<f64>) -> Result<SpikeReport> {
    let grid = sol.grid();
    let base = equilibrium_cost(sol, t_idx, x)?;
    let mut epsilons = Vec::new();
    let mut quotients = Vec::new();
    for eps in spike_schedule(grid.horizon()) {
        let realized = steps_for(grid, eps) as f64 * grid.step();
        if epsilons.last().is_some_and(|&e| realized >= e) {
            return Err(Error::InvalidArgument(format!(
                "grid with {} intervals cannot resolve the spike schedule",
                grid.intervals()
            )));
        }
        quotients.push(spike_quotient_from(sol, t_idx, x, v, eps, base)?);
        epsilons.push(realized);
    }
    let t = grid.node(t_idx);
    let ubar = sol.feedback(t, x)?;
    let w = v - &ubar;
    Ok(SpikeReport {
        t,
        x: x.as_slice().to_vec(),
        v: v.as_slice().to_vec(),
        extrapolated: richardson_first_order(&epsilons, &quotients)?,
        epsilons,
        quotients,
        analytic: spike_limit_analytic(sol, t_idx, x, v)?,
        reference: (sol.coeffs.m_diag.view(t_idx) * &w).dot(&w),
    })
}

/// Bellman residual on `[t, s]` for a control policy:
/// `∫_t^s [L(τ,τ,y,u) − R(τ,y)] dτ + V(s, y(s)) − V(t, x)`.
pub fn bellman_residual(
    sol: &EquilibriumSolution,
    t_idx: usize,
    s_idx: usize,
    x: &DVector<f64>,
    policy: &(impl ControlPolicy + ?Sized),
) -> Result<f64> {
    check_node(sol, t_idx, x)?;
    if s_idx < t_idx || s_idx > sol.grid().intervals() {
        return Err(Error::InvalidArgument(format!(
            "Bellman interval {t_idx}..{s_idx} is not inside the grid"
        )));
    }
    let grid = sol.grid();
    let v0 = sol.value(grid.node(t_idx), x)?;
    if s_idx == t_idx {
        return Ok(sol.value(grid.node(s_idx), x)? - v0);
    }
    let traj = simulate_control_until(sol.spec(), grid, policy, t_idx, s_idx, x)?;
    let running = integrate_along(grid, &traj, |k, y, u| {
        diagonal_lagrangian(sol, k, y, u) - sol.error_function_closed(k, y).expect("node on the grid")
    });
    let ys = traj.states.last().expect("non-empty");
    Ok(running + sol.value(grid.node(s_idx), ys)? - v0)
}

/// Piecewise-constant control on steps `start..end` with up to
/// [`CANDIDATE_PIECES`] pieces at random breaks and entries uniform in
/// `[−2, 2] · scale`.
pub fn random_candidate(rng: &mut impl Rng, start: usize, end: usize, m: usize, scale: f64) -> PiecewiseConstant {
    let steps = end.saturating_sub(start).max(1);
    let pieces = CANDIDATE_PIECES.min(steps);
    let mut breaks = vec![start];
    let mut interior: Vec<usize> = rand::seq::index::sample(rng, steps - 1, pieces - 1)
        .into_iter()
        .map(|i| start + 1 + i)
        .collect();
    interior.sort_unstable();
    breaks.extend(interior);
    let values = (0..pieces)
        .map(|_| DVector::from_fn(m, |_, _| rng.random_range(-2.0..=2.0) * scale))
        .collect();
    PiecewiseConstant { breaks, values }
}

/// `R(t,x)` from its definition, with the equilibrium trajectory and the
/// weight integrand advanced together by RK4 and kernels evaluated at the
/// exact stage times. Independent of the trapezoid tables behind the closed
/// form.
pub fn error_function_reference(sol: &EquilibriumSolution, t_idx: usize, x: &DVector<f64>) -> Result<f64> {
    check_node(sol, t_idx, x)?;
    let spec = sol.spec();
    let grid = sol.grid();
    let c = &sol.coeffs;
    let (n, m) = (spec.dims.n, spec.dims.m);
    let t = grid.node(t_idx);
    let h = grid.step();
    let mut kv = KernelValues::zeros(n, m);
    let mut stage =
        |s: f64, a: nalgebra::DMatrixView<f64>, b: nalgebra::DMatrixView<f64>, bias: DVector<f64>, y: &DVector<f64>| {
            let u = sol.feedback_gain_form(s, y).expect("time within the horizon");
            let dy = a * y + b * &u + bias;
            let dz = kv.derivatives(spec, t, s).lagrangian(y, &u);
            (dy, dz)
        };
    let mut y = x.clone();
    let mut z = 0.0;
    for k in t_idx..grid.intervals() {
        let d = &c.dynamics;
        let (s0, sm, s1) = (grid.node(k), grid.midpoint(k), grid.node(k + 1));
        let (k1, z1) = stage(s0, d.a.view(k), d.b.view(k), d.bias.vector(k), &y);
        let (k2, z2) = stage(
            sm,
            d.a_mid.view(k),
            d.b_mid.view(k),
            d.bias_mid.vector(k),
            &(&y + &k1 * (0.5 * h)),
        );
        let (k3, z3) = stage(
            sm,
            d.a_mid.view(k),
            d.b_mid.view(k),
            d.bias_mid.vector(k),
            &(&y + &k2 * (0.5 * h)),
        );
        let (k4, z4) = stage(
            s1,
            d.a.view(k + 1),
            d.b.view(k + 1),
            d.bias.vector(k + 1),
            &(&y + &k3 * h),
        );
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        z += (z1 + 2.0 * z2 + 2.0 * z3 + z4) * (h / 6.0);
    }
    let gd = spec.terminal.g_dt.eval(t);
    let gld = spec.terminal.g_lin_dt.eval(t);
    Ok(z + (gd * &y).dot(&y) + 2.0 * gld.column(0).dot(&y))
}

/// Pointwise residual `V_t + ⟨∇V, Ax⟩ + H(t,x,∇V,ū)` at node `t_idx`, with the
/// error function in `H` taken from [`error_function_reference`].
pub fn hjb_residual(sol: &EquilibriumSolution, t_idx: usize, x: &DVector<f64>) -> Result<f64> {
    let r = error_function_reference(sol, t_idx, x)?;
    let u = sol.feedback(sol.grid().node(t_idx), x)?;
    hamiltonian_form(sol, t_idx, x, &u, r)
}

/// Probe nodes nearest to `kT/10`, `k = 0..10`.
pub fn hjb_probe_nodes(grid: &TimeGrid) -> Vec<usize> {
    (0..HJB_TIMES)
        .map(|k| grid.nearest(k as f64 * grid.horizon() / HJB_TIMES as f64))
        .collect()
}

/// `sup |hjb_residual|` over the probe nodes × `states`, with the witness.
pub fn hjb_residual_sup(sol: &EquilibriumSolution, states: &[DVector<f64>], exec: Execution) -> Result<(f64, Witness)> {
    let nodes = hjb_probe_nodes(sol.grid());
    let pts: Vec<(usize, &DVector<f64>)> = nodes.iter().flat_map(|&k| states.iter().map(move |x| (k, x))).collect();
    let vals = map_range(exec, 0..pts.len(), |i| hjb_residual(sol, pts[i].0, pts[i].1));
    sup_with_witness(sol.grid(), &pts, vals)
}

fn sup_with_witness(grid: &TimeGrid, pts: &[(usize, &DVector<f64>)], vals: Vec<Result<f64>>) -> Result<(f64, Witness)> {
    let mut best = (0.0, Witness::default());
    for (&(k, x), v) in pts.iter().zip(vals) {
        let v = v?.abs();
        if v >= best.0 || best.1.x.is_empty() {
            best = (v, Witness::at(grid.node(k), x));
        }
    }
    Ok(best)
}

/// `h(t,x,p) = M(t,t)⁻¹(½B(t)ᵀp + S(t,t)x + ρ(t,t))` at node `k`.
fn h_fn(sol: &EquilibriumSolution, k: usize, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
    let c = &sol.coeffs;
    let rhs = c.dynamics.b.view(k).transpose() * p * 0.5 + c.s.view(k) * x + c.rho.vector(k);
    let sol_m = c.solve_m(k, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()));
    DVector::from_column_slice(sol_m.as_slice())
}

/// `H̃(t,x,p) = ⟨½Bᵀp − Sx − ρ, h⟩ + ⟨Qx + 2q, x⟩` at node `k`.
fn h_tilde(sol: &EquilibriumSolution, k: usize, x: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let c = &sol.coeffs;
    let h = h_fn(sol, k, x, p);
    let left = c.dynamics.b.view(k).transpose() * p * 0.5 - c.s.view(k) * x - c.rho.vector(k);
    left.dot(&h) + (c.q.view(k) * x + c.q_lin.vector(k) * 2.0).dot(x)
}

/// `F(t,s,x,p) = ⟨M_t h − 2S_t x − 2ρ_t, h⟩ + ⟨Q_t x + 2q_t, x⟩`, with the
/// derivative kernels already in `kv` and `h = h(s,x,p)`.
fn f_fn(kv: &KernelValues, x: &DVector<f64>, h: &DVector<f64>) -> f64 {
    let left = &kv.m * h - &kv.s * x * 2.0 - kv.rho.column(0) * 2.0;
    left.dot(h) + (&kv.q * x + kv.q_lin.column(0) * 2.0).dot(x)
}

/// Integral-form HJB residual: the right side
/// `⟨G(t)Y(T) + 2g(t), Y(T)⟩ + ∫_t^T [H̃(τ,Y,∇V) − ∫_τ^T F(τ,s,Y(s),∇V(s,Y(s))) ds] dτ`
/// along the equilibrium trajectory from `(t, x)`, minus `V(t,x)`. Both
/// integrals use the trapezoid rule on the grid.
pub fn hjb_integral_residual(sol: &EquilibriumSolution, t_idx: usize, x: &DVector<f64>) -> Result<f64> {
    check_node(sol, t_idx, x)?;
    let spec = sol.spec();
    let grid = sol.grid();
    let (n, m) = (spec.dims.n, spec.dims.m);
    let traj = sol.simulate_equilibrium(t_idx, x)?;
    let last = grid.intervals();
    let grads: Vec<DVector<f64>> = traj
        .states
        .iter()
        .enumerate()
        .map(|(l, y)| sol.grad_value(grid.node(t_idx + l), y))
        .collect::<Result<_>>()?;
    let hs: Vec<DVector<f64>> = traj
        .states
        .iter()
        .zip(&grads)
        .enumerate()
        .map(|(l, (y, p))| h_fn(sol, t_idx + l, y, p))
        .collect();
    let mut kv = KernelValues::zeros(n, m);
    let mut outer = vec![0.0; traj.states.len()];
    for (l, o) in outer.iter_mut().enumerate() {
        let k = t_idx + l;
        let tau = grid.node(k);
        let mut inner = 0.0;
        for j in k..=last {
            let jl = j - t_idx;
            kv.derivatives(spec, tau, grid.node(j));
            inner += grid.weight(k, last, j) * f_fn(&kv, &traj.states[jl], &hs[jl]);
        }
        *o = h_tilde(sol, k, &traj.states[l], &grads[l]) - inner;
    }
    let running: f64 = outer
        .iter()
        .enumerate()
        .map(|(l, o)| grid.weight(t_idx, last, t_idx + l) * o)
        .sum();
    let t = grid.node(t_idx);
    let yt = traj.states.last().expect("non-empty");
    let g = spec.terminal.g.eval(t);
    let gl = spec.terminal.g_lin.eval(t);
    let terminal = (g * yt).dot(yt) + 2.0 * gl.column(0).dot(yt);
    Ok(terminal + running - sol.value(t, x)?)
}

/// `sup |hjb_integral_residual|` over the probe nodes × `states`.
pub fn hjb_integral_residual_sup(
    sol: &EquilibriumSolution,
    states: &[DVector<f64>],
    exec: Execution,
) -> Result<(f64, Witness)> {
    let nodes = hjb_probe_nodes(sol.grid());
    let pts: Vec<(usize, &DVector<f64>)> = nodes.iter().flat_map(|&k| states.iter().map(move |x| (k, x))).collect();
    let vals = map_range(exec, 0..pts.len(), |i| hjb_integral_residual(sol, pts[i].0, pts[i].1));
    sup_with_witness(sol.grid(), &pts, vals)
}

fn describe(init: &InitialGuess) -> String {
    match init {
        InitialGuess::Terminal => "G(T)".into(),
        InitialGuess::Zero => "0".into(),
        InitialGuess::ScaledTerminal(c) => format!("{c}·G(T)"),
        InitialGuess::Table(_) => "table".into(),
    }
}

/// Solves from each initial guess and reports the largest pairwise sup
/// distance of the `P` tables and of `V` at the sample points.
pub fn uniqueness_probe(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    opts: &SolveOptions,
    inits: &[InitialGuess],
    points: &[(usize, DVector<f64>)],
) -> Result<UniquenessReport> {
    if inits.len() < 2 {
        return Err(Error::InvalidArgument(
            "uniqueness probe needs two or more initial guesses".into(),
        ));
    }
    let sols = inits
        .iter()
        .map(|init| {
            let o = SolveOptions {
                initial: init.clone(),
                ..opts.clone()
            };
            EquilibriumSolution::solve(spec, grid, &o)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut p_distance = 0.0f64;
    let mut value_distance = 0.0f64;
    for (i, a) in sols.iter().enumerate() {
        for b in &sols[i + 1..] {
            p_distance = p_distance.max(a.riccati().p.sup_distance(&b.riccati().p));
            for (k, x) in points {
                let t = grid.node(*k);
                value_distance = value_distance.max((a.value(t, x)? - b.value(t, x)?).abs());
            }
        }
    }
    Ok(UniquenessReport {
        inits: inits.iter().map(describe).collect(),
        p_distance,
        value_distance,
        iterations: sols
            .iter()
            .map(|s| s.riccati().diagnostics.iteration.iterations)
            .collect(),
    })
}

/// Seeded sampler for probe points.
pub struct Sampler {
    rng: ChaCha8Rng,
    n: usize,
    m: usize,
    state_scale: f64,
    control_scale: f64,
}

impl Sampler {
    pub fn new(seed: u64, n: usize, m: usize, state_scale: f64, control_scale: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n,
            m,
            state_scale,
            control_scale,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Node index in `lo..hi`.
    pub fn node(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..hi)
    }

    pub fn state(&mut self) -> DVector<f64> {
        let s = self.state_scale;
        DVector::from_fn(self.n, |_, _| self.rng.random_range(-s..=s))
    }

    /// Direction of length `[0.5, 2] · control_scale`.
    pub fn control_offset(&mut self) -> DVector<f64> {
        loop {
            let w = DVector::from_fn(self.m, |_, _| self.rng.random_range(-1.0..=1.0));
            let norm = w.norm();
            if norm > 1e-3 {
                let len = self.rng.random_range(0.5..=2.0) * self.control_scale;
                return w * (len / norm);
            }
        }
    }
}

fn pass(name: &str, value: f64, tolerance: f64, ok: bool, witness: Witness) -> Check {
    Check {
        name: name.into(),
        passed: ok && value.is_finite(),
        value,
        tolerance,
        witness,
        note: String::new(),
    }
}

/// Tracks the worst value of a check.
struct Worst {
    value: f64,
    witness: Witness,
    ok: bool,
    seen: bool,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: 0.0,
            witness: Witness::default(),
            ok: true,
            seen: false,
        }
    }

    /// Records `value` (larger is worse) and whether it met its bound.
    fn push(&mut self, value: f64, ok: bool, witness: impl FnOnce() -> Witness) {
        self.ok &= ok && value.is_finite();
        if !self.seen || value > self.value || value.is_nan() {
            self.value = value;
            self.witness = witness();
            self.seen = true;
        }
    }

    fn check(self, name: &str, tolerance: f64) -> Check {
        pass(name, self.value, tolerance, self.ok, self.witness)
    }
}

/// Runs every check on a solved problem.
pub fn verify(
    sol: &EquilibriumSolution,
    opts: &VerifyOptions,
    solve_opts: &SolveOptions,
) -> Result<VerificationReport> {
    let spec = sol.spec();
    let grid = sol.grid();
    let (n, m) = (spec.dims.n, spec.dims.m);
    let nn = grid.intervals();
    let exec = opts.execution;
    let mut sampler = Sampler::new(opts.seed, n, m, opts.state_scale, opts.control_scale);
    let mut checks = Vec::new();

    // V = J(·,·;ū)
    let pts: Vec<(usize, DVector<f64>)> = (0..opts.value_probes)
        .map(|_| (sampler.node(0, nn), sampler.state()))
        .collect();
    let vals = map_range(exec, 0..pts.len(), |i| -> Result<(f64, f64)> {
        let (k, x) = &pts[i];
        let v = sol.value(grid.node(*k), x)?;
        let traj = sol.simulate_equilibrium(*k, x)?;
        Ok((v, cost(spec, grid, &traj, *k)?))
    });
    let mut w = Worst::new();
    for ((k, x), r) in pts.iter().zip(vals) {
        let (v, j) = r?;
        let err = (v - j).abs() / (1.0 + v.abs());
        w.push(err, err <= VALUE_TOL, || Witness::at(grid.node(*k), x));
    }
    checks.push(w.check("value_equals_cost", VALUE_TOL));

    // Feedback forms at every node.
    let mut w = Worst::new();
    for k in 0..=nn {
        let x = sampler.state();
        let t = grid.node(k);
        let a = sol.feedback(t, &x)?;
        let b = sol.feedback_gain_form(t, &x)?;
        let err = (&a - &b).amax() / (1.0 + a.amax());
        w.push(err, err <= FEEDBACK_TOL, || Witness::at(t, &x));
    }
    checks.push(w.check("feedback_forms_agree", FEEDBACK_TOL));

    // ∇V against central differences.
    let mut w = Worst::new();
    for _ in 0..opts.gradient_probes {
        let t = grid.node(sampler.node(0, nn + 1));
        let x = sampler.state();
        let err = gradient_error(sol, t, &x)?;
        w.push(err, err <= GRADIENT_TOL, || Witness::at(t, &x));
    }
    checks.push(w.check("gradient_matches_differences", GRADIENT_TOL));

    // Direct vs closed-form error function.
    let pts: Vec<(usize, DVector<f64>)> = (0..opts.error_probes)
        .map(|_| (sampler.node(0, nn + 1), sampler.state()))
        .collect();
    let vals = map_range(exec, 0..pts.len(), |i| -> Result<(f64, f64)> {
        let (k, x) = &pts[i];
        Ok((sol.error_function_direct(*k, x)?, sol.error_function_closed(*k, x)?))
    });
    let mut w = Worst::new();
    for ((k, x), r) in pts.iter().zip(vals) {
        let (d, c) = r?;
        let err = relative_gap(d, c);
        w.push(err, err <= ERROR_FUNCTION_TOL, || Witness::at(grid.node(*k), x));
    }
    checks.push(w.check("error_function_forms_agree", ERROR_FUNCTION_TOL));

    // Spike variations.
    let widest = steps_for(grid, spike_schedule(grid.horizon())[0]);
    let resolvable = spike_schedule_resolvable(grid);
    let mut spikes = Vec::new();
    let mut notes = vec![
        "spike checks evaluate a finite ε schedule with first-order extrapolation and cannot distinguish liminf from lim".to_string(),
        "Bellman candidates are random piecewise-constant controls; sampling can falsify the inequality but not certify the infimum".to_string(),
    ];
    if resolvable {
        let probes: Vec<(usize, DVector<f64>, DVector<f64>)> = (0..opts.spike_probes)
            .map(|_| {
                let k = sampler.node(0, nn - widest + 1);
                (k, sampler.state(), sampler.control_offset())
            })
            .collect();
        let reports = map_range(exec, 0..probes.len(), |i| -> Result<(SpikeReport, SpikeReport)> {
            let (k, x, w) = &probes[i];
            let ubar = sol.feedback(grid.node(*k), x)?;
            Ok((spike_probe(sol, *k, x, &(&ubar + w))?, spike_probe(sol, *k, x, &ubar)?))
        });
        let mut floor = Worst::new();
        let mut zero = Worst::new();
        let mut rel = Worst::new();
        let mut analytic = Worst::new();
        for r in reports {
            let (off, on) = r?;
            let wit = |r: &SpikeReport| Witness {
                t: r.t,
                x: r.x.clone(),
                v: Some(r.v.clone()),
                s: None,
            };
            for rep in [&off, &on] {
                let low = -rep.extrapolated;
                floor.push(low, rep.extrapolated >= SPIKE_FLOOR, || wit(rep));
            }
            zero.push(on.extrapolated.abs(), on.extrapolated.abs() <= SPIKE_ZERO_TOL, || {
                wit(&on)
            });
            let e = (off.extrapolated - off.reference).abs() / off.reference;
            rel.push(e, e <= SPIKE_RELATIVE_TOL, || wit(&off));
            let a = (off.analytic - on.analytic - off.reference).abs() / (1.0 + off.reference);
            analytic.push(a, a <= 1e-8, || wit(&off));
            spikes.push(off);
            spikes.push(on);
        }
        let mut c = floor.check("spike_quotient_nonnegative", -SPIKE_FLOOR);
        c.note = "value is the largest negated extrapolated quotient".into();
        checks.push(c);
        checks.push(zero.check("spike_limit_zero_at_equilibrium", SPIKE_ZERO_TOL));
        checks.push(rel.check("spike_limit_matches_control_weight", SPIKE_RELATIVE_TOL));
        checks.push(analytic.check("hamiltonian_convexity", 1e-8));
    } else {
        notes.push(
            "grid too coarse for the spike schedule (needs two or more steps at T/400); spike checks skipped".into(),
        );
    }

    // Bellman principle.
    let cands: Vec<(usize, usize, DVector<f64>, PiecewiseConstant)> = (0..opts.bellman_candidates)
        .map(|_| {
            let t = sampler.node(0, nn);
            let s = sampler.node(t + 1, nn + 1);
            let x = sampler.state();
            let u = random_candidate(sampler.rng(), t, s, m, opts.control_scale);
            (t, s, x, u)
        })
        .collect();
    let res = map_range(exec, 0..cands.len(), |i| -> Result<(f64, f64)> {
        let (t, s, x, u) = &cands[i];
        Ok((
            bellman_residual(sol, *t, *s, x, u)?,
            bellman_residual(sol, *t, *s, x, sol)?,
        ))
    });
    let mut ineq = Worst::new();
    let mut eq = Worst::new();
    let mut bellman = Vec::new();
    for ((t, s, x, _), r) in cands.iter().zip(res) {
        let (r, e) = r?;
        let wit = || Witness {
            s: Some(grid.node(*s)),
            ..Witness::at(grid.node(*t), x)
        };
        ineq.push(-r, r >= BELLMAN_FLOOR, wit);
        eq.push(e.abs(), e.abs() <= BELLMAN_EQUALITY_TOL, wit);
        bellman.push(BellmanSample {
            t: grid.node(*t),
            s: grid.node(*s),
            x: x.as_slice().to_vec(),
            residual: r,
            equilibrium_residual: e,
        });
    }
    let mut c = ineq.check("bellman_inequality", -BELLMAN_FLOOR);
    c.note = "value is the largest negated residual".into();
    checks.push(c);
    checks.push(eq.check("bellman_equality_at_equilibrium", BELLMAN_EQUALITY_TOL));

    // HJB residuals.
    let states: Vec<DVector<f64>> = (0..opts.hjb_states).map(|_| sampler.state()).collect();
    let nodes = hjb_probe_nodes(grid);
    let pts: Vec<(usize, &DVector<f64>)> = nodes.iter().flat_map(|&k| states.iter().map(move |x| (k, x))).collect();
    let vals = map_range(exec, 0..pts.len(), |i| -> Result<HjbSample> {
        let (k, x) = pts[i];
        let t = grid.node(k);
        Ok(HjbSample {
            t,
            x: x.as_slice().to_vec(),
            pointwise: hjb_residual(sol, k, x)?,
            integral: hjb_integral_residual(sol, k, x)?,
            value: sol.value(t, x)?,
        })
    });
    let hjb = vals.into_iter().collect::<Result<Vec<_>>>()?;
    let mut pw = Worst::new();
    let mut ig = Worst::new();
    let (mut pw_sup, mut ig_sup) = (0.0f64, 0.0f64);
    for s in &hjb {
        let scale = 1.0 + s.value.abs();
        let wit = || Witness {
            t: s.t,
            x: s.x.clone(),
            ..Witness::default()
        };
        pw_sup = pw_sup.max(s.pointwise.abs());
        ig_sup = ig_sup.max(s.integral.abs());
        pw.push(
            s.pointwise.abs() / scale,
            s.pointwise.abs() <= opts.hjb_tolerance * scale,
            wit,
        );
        ig.push(
            s.integral.abs() / scale,
            s.integral.abs() <= opts.hjb_tolerance * scale,
            wit,
        );
    }
    checks.push(pw.check("hjb_pointwise_residual", opts.hjb_tolerance));
    checks.push(ig.check("hjb_integral_residual", opts.hjb_tolerance));

    // Uniqueness across initial guesses.
    let uniqueness = if opts.uniqueness {
        let inits = [
            InitialGuess::Zero,
            InitialGuess::Terminal,
            InitialGuess::ScaledTerminal(5.0),
        ];
        let points: Vec<(usize, DVector<f64>)> = states.iter().map(|x| (0, x.clone())).collect();
        let rep = uniqueness_probe(spec, grid, solve_opts, &inits, &points)?;
        let tol = 10.0 * solve_opts.tolerance;
        checks.push(pass(
            "uniqueness_across_initial_guesses",
            rep.p_distance,
            tol,
            rep.p_distance <= tol,
            Witness::default(),
        ));
        Some(rep)
    } else {
        None
    };

    Ok(VerificationReport {
        seed: opts.seed,
        intervals: nn,
        checks,
        spikes,
        bellman,
        hjb,
        hjb_residual_sup: pw_sup,
        hjb_integral_residual_sup: ig_sup,
        uniqueness,
        notes,
    })
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Largest relative gap between `∇V` and central differences of `V`.
pub fn gradient_error(sol: &EquilibriumSolution, t: f64, x: &DVector<f64>) -> Result<f64> {
    let g = sol.grad_value(t, x)?;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let step = 1e-4 * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        let fd = (sol.value(t, &xp)? - sol.value(t, &xm)?) / (2.0 * step);
        worst = worst.max((fd - g[i]).abs() / (1.0 + g[i].abs()));
    }
    Ok(worst)
}
