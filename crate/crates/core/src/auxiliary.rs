//! Affine and constant parts of the value function.
//!
//! ```text
//! φ̇ + (A − BΓ)ᵀφ − 𝕊 + Pb + q(t,t) − Γᵀρ(t,t) = 0,            φ(T) = g(T),
//! ψ̇ + 2⟨φ, b − BΥ⟩ − ω + ⟨M(t,t)Υ − 2ρ(t,t), Υ⟩ = 0,          ψ(T) = 0,
//! Υ = M(t,t)⁻¹(Bᵀφ + ρ(t,t)),   b̃(s,t) = ∫_t^s 𝔼(s,τ)(b − BΥ)(τ) dτ.
//! ```
//!
//! `𝕊(t)` and `ω(t)` collect the t-derivatives of the weights along the
//! closed loop, so they depend on `φ` over `[t, T]` and the φ-equation is
//! solved by Picard iteration.

use nalgebra::{Cholesky, DVector};
use serde::Serialize;

use crate::coeffs::GridCoefficients;
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, TransitionTable};
use crate::iteration::{damped_fixed_point, InitialGuess, IterationDiagnostics, SolveOptions};
use crate::par::{map_range, Execution};
use crate::problem::{DynamicsField, ProblemSpec};
use crate::riccati::RiccatiSolution;
use crate::series::{dot, matmul, tmatmul, MatrixSeries};

/// `b̃(s_i, t_j)` for `j ≤ i`, packed by `t` index.
#[derive(Clone, Debug, PartialEq)]
pub struct BtildeTable {
    n: usize,
    nodes: usize,
    data: Vec<f64>,
}

impl BtildeTable {
    fn column_offset(&self, j: usize) -> usize {
        (j * self.nodes - j * j.saturating_sub(1) / 2) * self.n
    }

    /// `b̃(s_i, t_j)`.
    pub fn get(&self, i: usize, j: usize) -> Result<DVector<f64>> {
        if j > i || i >= self.nodes {
            return Err(Error::InvalidArgument(format!(
                "b̃({i},{j}) requires j ≤ i < {}",
                self.nodes
            )));
        }
        let off = self.column_offset(j) + (i - j) * self.n;
        Ok(DVector::from_column_slice(&self.data[off..off + self.n]))
    }
}

/// Walks `k = j..=N`, calling `f(k, 𝔼(k,j), b̃(k,j))`, with
/// `b̃(k+1,j) = F_k[b̃(k,j) + (h/2)c_k] + (h/2)c_{k+1}` (trapezoid rule).
pub(crate) fn walk_btilde(
    j: usize,
    factors: &MatrixSeries,
    c: &MatrixSeries,
    h: f64,
    mut f: impl FnMut(usize, &[f64], &[f64]),
) {
    let n = c.rows();
    let last = factors.len();
    let mut e = vec![0.0; n * n];
    crate::series::identity_into(&mut e, n);
    let mut e_next = vec![0.0; n * n];
    let mut bt = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut bt_next = vec![0.0; n];
    for k in j..=last {
        f(k, &e, &bt);
        if k < last {
            let fk = factors.slice(k);
            for ((t, b), ck) in tmp.iter_mut().zip(&bt).zip(c.slice(k)) {
                *t = b + 0.5 * h * ck;
            }
            matmul(fk, n, n, &tmp, 1, &mut bt_next);
            for (b, ck) in bt_next.iter_mut().zip(c.slice(k + 1)) {
                *b += 0.5 * h * ck;
            }
            std::mem::swap(&mut bt, &mut bt_next);
            matmul(fk, n, n, &e, n, &mut e_next);
            std::mem::swap(&mut e, &mut e_next);
        }
    }
}

/// Drift of the closed loop's affine part, `c = b − BΥ`, at every node.
pub(crate) fn affine_drift(coeffs: &GridCoefficients, upsilon: &MatrixSeries) -> MatrixSeries {
    let n = coeffs.n;
    let m = coeffs.m;
    let mut out = MatrixSeries::zeros(upsilon.len(), n, 1);
    let mut bu = vec![0.0; n];
    for i in 0..upsilon.len() {
        matmul(coeffs.dynamics.b.slice(i), n, m, upsilon.slice(i), 1, &mut bu);
        for ((o, b), x) in out.slice_mut(i).iter_mut().zip(coeffs.dynamics.bias.slice(i)).zip(&bu) {
            *o = b - x;
        }
    }
    out
}

/// `b̃` for all pairs from a closed-loop table and affine gain.
pub fn btilde_table(
    closed: &TransitionTable,
    upsilon: &MatrixSeries,
    dynamics: &DynamicsField,
    grid: &TimeGrid,
) -> Result<BtildeTable> {
    let (n, m) = dynamics.b.shape();
    if upsilon.len() != grid.len() || upsilon.shape() != (m, 1) || closed.nodes() != grid.len() {
        return Err(Error::Shape("Υ table, transition table and grid disagree".into()));
    }
    let nodes = grid.len();
    let mut c = MatrixSeries::zeros(nodes, n, 1);
    for i in 0..nodes {
        let t = grid.node(i);
        let v = dynamics.bias.eval(t) - dynamics.b.eval(t) * upsilon.matrix(i);
        c.set(i, &v);
    }
    Ok(build_btilde(closed.factors(), &c, grid.step()))
}

fn build_btilde(factors: &MatrixSeries, c: &MatrixSeries, h: f64) -> BtildeTable {
    let n = c.rows();
    let nodes = factors.len() + 1;
    let mut data = Vec::with_capacity(nodes * (nodes + 1) / 2 * n);
    for j in 0..nodes {
        walk_btilde(j, factors, c, h, |_, _, bt| data.extend_from_slice(bt));
    }
    BtildeTable { n, nodes, data }
}

/// `Υ = M(t,t)⁻¹(B(t)ᵀφ + ρ(t,t))`.
pub fn upsilon_from_phi(phi: &DVector<f64>, spec: &ProblemSpec, t: f64) -> Result<DVector<f64>> {
    let m = spec.costs.m.value(t, t);
    let chol = Cholesky::new((&m + m.transpose()) * 0.5).ok_or(Error::NotPositiveDefinite { t })?;
    let rhs = spec.dynamics.b.eval(t).transpose() * phi + spec.costs.rho.value(t, t);
    Ok(DVector::from_column_slice(chol.solve(&rhs).as_slice()))
}

pub(crate) struct AuxEngine<'a> {
    pub spec: &'a ProblemSpec,
    pub coeffs: &'a GridCoefficients,
    pub gamma: &'a MatrixSeries,
    pub factors: &'a MatrixSeries,
    pub exec: Execution,
    active: [bool; 5],
}

impl<'a> AuxEngine<'a> {
    pub fn new(
        spec: &'a ProblemSpec,
        coeffs: &'a GridCoefficients,
        riccati: &'a RiccatiSolution,
        exec: Execution,
    ) -> Self {
        let c = &spec.costs;
        Self {
            spec,
            coeffs,
            gamma: &riccati.gamma,
            factors: riccati.closed_loop.factors(),
            exec,
            active: [
                !c.q.dt_vanishes(),
                !c.s.dt_vanishes(),
                !c.m.dt_vanishes(),
                !c.q_lin.dt_vanishes(),
                !c.rho.dt_vanishes(),
            ],
        }
    }

    fn vanishes(&self) -> bool {
        self.coeffs.quadratic_consistent && self.coeffs.linear_consistent
    }

    /// `(𝕊(t_j), ω(t_j))` given `Υ` and `c = b − BΥ`.
    pub fn sbb_omega_node(&self, j: usize, upsilon: &MatrixSeries, c: &MatrixSeries) -> (Vec<f64>, f64) {
        let (n, m) = (self.coeffs.n, self.coeffs.m);
        let grid = &self.coeffs.grid;
        let last = grid.intervals();
        let tj = grid.node(j);
        let costs = &self.spec.costs;
        let [aq, as_, am, aql, arho] = self.active;
        let mut qt = vec![0.0; n * n];
        let mut st = vec![0.0; m * n];
        let mut mt = vec![0.0; m * m];
        let mut qlt = vec![0.0; n];
        let mut rhot = vec![0.0; m];
        let mut ut = vec![0.0; m];
        let mut gb = vec![0.0; m];
        let mut v = vec![0.0; n];
        let mut tmp_n = vec![0.0; n];
        let mut tmp_m = vec![0.0; m];
        let mut ev = vec![0.0; n];
        let mut sb = vec![0.0; m];
        let mut mu = vec![0.0; m];
        let mut acc_s = vec![0.0; n];
        let mut acc_w = 0.0;
        let mut end_e = vec![0.0; n * n];
        let mut end_bt = vec![0.0; n];
        let any = self.active.iter().any(|a| *a);
        walk_btilde(j, self.factors, c, grid.step(), |k, e, bt| {
            if k == last {
                end_e.copy_from_slice(e);
                end_bt.copy_from_slice(bt);
            }
            let w = grid.weight(j, last, k);
            if !any || w == 0.0 {
                return;
            }
            let tk = grid.node(k);
            let g = self.gamma.slice(k);
            let ups = upsilon.slice(k);
            // ũ = Γb̃ + Υ, the affine part of −ū along the trajectory.
            matmul(g, m, n, bt, 1, &mut gb);
            for ((u, a), b) in ut.iter_mut().zip(&gb).zip(ups) {
                *u = a + b;
            }
            v.iter_mut().for_each(|x| *x = 0.0);
            tmp_m.iter_mut().for_each(|x| *x = 0.0);
            let mut scalar = 0.0;
            if aq {
                costs.q.dt_into(tj, tk, &mut qt);
                matmul(&qt, n, n, bt, 1, &mut tmp_n);
                v.iter_mut().zip(&tmp_n).for_each(|(a, b)| *a += b);
                scalar += dot(&tmp_n, bt);
            }
            if aql {
                costs.q_lin.dt_into(tj, tk, &mut qlt);
                v.iter_mut().zip(&qlt).for_each(|(a, b)| *a += b);
                scalar += 2.0 * dot(&qlt, bt);
            }
            if as_ {
                costs.s.dt_into(tj, tk, &mut st);
                // −S_tᵀũ into v; −S_t b̃ into the Γᵀ bracket.
                tmatmul(&st, m, n, &ut, 1, &mut tmp_n);
                v.iter_mut().zip(&tmp_n).for_each(|(a, b)| *a -= b);
                matmul(&st, m, n, bt, 1, &mut sb);
                tmp_m.iter_mut().zip(&sb).for_each(|(a, b)| *a -= b);
                // 2⟨−ΓᵀS_t b̃ − S_tᵀΥ, b̃⟩ = −2⟨S_t b̃, Γb̃ + Υ⟩.
                scalar -= 2.0 * dot(&sb, &ut);
            }
            if am {
                costs.m.dt_into(tj, tk, &mut mt);
                matmul(&mt, m, m, &ut, 1, &mut mu);
                tmp_m.iter_mut().zip(&mu).for_each(|(a, b)| *a += b);
                scalar += dot(&mu, &ut);
            }
            if arho {
                costs.rho.dt_into(tj, tk, &mut rhot);
                tmp_m.iter_mut().zip(&rhot).for_each(|(a, b)| *a -= b);
                scalar -= 2.0 * dot(&rhot, &ut);
            }
            // v += Γᵀ(M_t ũ − S_t b̃ − ρ_t)
            tmatmul(g, m, n, &tmp_m, 1, &mut tmp_n);
            v.iter_mut().zip(&tmp_n).for_each(|(a, b)| *a += b);
            tmatmul(e, n, n, &v, 1, &mut ev);
            acc_s.iter_mut().zip(&ev).for_each(|(a, b)| *a += w * b);
            acc_w += w * scalar;
        });
        // Terminal: 𝔼ᵀ(ġ + Ġb̃) and ⟨Ġb̃ + 2ġ, b̃⟩.
        let gdt = self.coeffs.g_dt.slice(j);
        let gldt = self.coeffs.g_lin_dt.slice(j);
        let mut gb_t = vec![0.0; n];
        matmul(gdt, n, n, &end_bt, 1, &mut gb_t);
        let mut term = gb_t.clone();
        term.iter_mut().zip(gldt).for_each(|(a, b)| *a += b);
        tmatmul(&end_e, n, n, &term, 1, &mut ev);
        acc_s.iter_mut().zip(&ev).for_each(|(a, b)| *a += b);
        acc_w += dot(&gb_t, &end_bt) + 2.0 * dot(gldt, &end_bt);
        (acc_s, acc_w)
    }

    pub fn sbb_omega_all(&self, upsilon: &MatrixSeries) -> (MatrixSeries, Vec<f64>) {
        let n = self.coeffs.n;
        let len = self.coeffs.grid.len();
        if self.vanishes() {
            return (MatrixSeries::zeros(len, n, 1), vec![0.0; len]);
        }
        let c = affine_drift(self.coeffs, upsilon);
        let rows = map_range(self.exec, 0..len, |j| self.sbb_omega_node(j, upsilon, &c));
        let mut sbb = Vec::with_capacity(len * n);
        let mut omega = Vec::with_capacity(len);
        for (s, w) in rows {
            sbb.extend_from_slice(&s);
            omega.push(w);
        }
        (MatrixSeries::from_flat(len, n, 1, sbb), omega)
    }

    /// Backward RK4 of the φ-equation for a given 𝕊 table.
    pub fn integrate_phi(&self, p: &MatrixSeries, sbb: &MatrixSeries) -> MatrixSeries {
        let c = self.coeffs;
        let (n, m) = (c.n, c.m);
        let grid = &c.grid;
        let len = grid.len();
        let h = grid.step();
        let dyn_ = &c.dynamics;
        // φ̇ = −Cᵀφ + r with C = A − BΓ, r = 𝕊 − Pb − q + Γᵀρ.
        let coeff = |a: &[f64], b: &[f64], g: &[f64], pm: &[f64], bias: &[f64], s: &[f64], ql: &[f64], rho: &[f64]| {
            let mut cm = vec![0.0; n * n];
            matmul(b, n, m, g, n, &mut cm);
            cm.iter_mut().zip(a).for_each(|(x, y)| *x = y - *x);
            let mut r = vec![0.0; n];
            matmul(pm, n, n, bias, 1, &mut r);
            let mut gr = vec![0.0; n];
            tmatmul(g, m, n, rho, 1, &mut gr);
            for i in 0..n {
                r[i] = s[i] - r[i] - ql[i] + gr[i];
            }
            (cm, r)
        };
        let rhs = |cm: &[f64], r: &[f64], phi: &[f64], out: &mut [f64]| {
            tmatmul(cm, n, n, phi, 1, out);
            out.iter_mut().zip(r).for_each(|(o, ri)| *o = ri - *o);
        };
        let mut phi = MatrixSeries::zeros(len, n, 1);
        phi.slice_mut(len - 1).copy_from_slice(c.g_lin.slice(len - 1));
        let avg = |s: &MatrixSeries, k: usize| -> Vec<f64> {
            s.slice(k)
                .iter()
                .zip(s.slice(k + 1))
                .map(|(a, b)| 0.5 * (a + b))
                .collect()
        };
        let mut node = coeff(
            dyn_.a.slice(len - 1),
            dyn_.b.slice(len - 1),
            self.gamma.slice(len - 1),
            p.slice(len - 1),
            dyn_.bias.slice(len - 1),
            sbb.slice(len - 1),
            c.q_lin.slice(len - 1),
            c.rho.slice(len - 1),
        );
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut y = vec![0.0; n];
        for k in (0..len - 1).rev() {
            let mid = coeff(
                dyn_.a_mid.slice(k),
                dyn_.b_mid.slice(k),
                &avg(self.gamma, k),
                &avg(p, k),
                dyn_.bias_mid.slice(k),
                &avg(sbb, k),
                c.q_lin_mid.slice(k),
                c.rho_mid.slice(k),
            );
            let low = coeff(
                dyn_.a.slice(k),
                dyn_.b.slice(k),
                self.gamma.slice(k),
                p.slice(k),
                dyn_.bias.slice(k),
                sbb.slice(k),
                c.q_lin.slice(k),
                c.rho.slice(k),
            );
            let f = phi.slice(k + 1).to_vec();
            rhs(&node.0, &node.1, &f, &mut k1);
            y.iter_mut()
                .zip(&f)
                .zip(&k1)
                .for_each(|((y, a), b)| *y = a - 0.5 * h * b);
            rhs(&mid.0, &mid.1, &y, &mut k2);
            y.iter_mut()
                .zip(&f)
                .zip(&k2)
                .for_each(|((y, a), b)| *y = a - 0.5 * h * b);
            rhs(&mid.0, &mid.1, &y, &mut k3);
            y.iter_mut().zip(&f).zip(&k3).for_each(|((y, a), b)| *y = a - h * b);
            rhs(&low.0, &low.1, &y, &mut k4);
            let out = phi.slice_mut(k);
            for i in 0..n {
                out[i] = f[i] - h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            node = low;
        }
        phi
    }
}

/// φ together with the quantities computed from it.
#[derive(Clone, Debug)]
pub struct PhiSolution {
    pub phi: MatrixSeries,
    pub upsilon: MatrixSeries,
    pub sbb: MatrixSeries,
    pub omega: Vec<f64>,
    pub diagnostics: IterationDiagnostics,
}

/// Converged auxiliary data on a grid.
#[derive(Clone, Debug)]
pub struct AuxiliarySolution {
    pub phi: MatrixSeries,
    pub psi: Vec<f64>,
    pub upsilon: MatrixSeries,
    pub sbb: MatrixSeries,
    pub omega: Vec<f64>,
    /// All-pairs `b̃` when it fits the entry budget.
    pub btilde: Option<BtildeTable>,
    pub diagnostics: AuxDiagnostics,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AuxDiagnostics {
    pub phi_iteration: IterationDiagnostics,
}

fn check_riccati(coeffs: &GridCoefficients, riccati: &RiccatiSolution) -> Result<()> {
    let len = coeffs.grid.len();
    if riccati.p.len() != len || riccati.gamma.len() != len || riccati.closed_loop.nodes() != len {
        return Err(Error::Shape("Riccati solution was computed on a different grid".into()));
    }
    if !riccati.diagnostics.iteration.converged {
        return Err(Error::InvalidArgument("Riccati solution is not converged".into()));
    }
    Ok(())
}

/// `𝕊(t_j)` for a given φ table.
pub fn sbb_at(
    j: usize,
    phi: &MatrixSeries,
    riccati: &RiccatiSolution,
    spec: &ProblemSpec,
    grid: &TimeGrid,
) -> Result<DVector<f64>> {
    Ok(sbb_omega_at(j, phi, riccati, spec, grid)?.0)
}

/// `ω(t_j)` for a given φ table.
pub fn omega_at(
    j: usize,
    phi: &MatrixSeries,
    riccati: &RiccatiSolution,
    spec: &ProblemSpec,
    grid: &TimeGrid,
) -> Result<f64> {
    Ok(sbb_omega_at(j, phi, riccati, spec, grid)?.1)
}

fn sbb_omega_at(
    j: usize,
    phi: &MatrixSeries,
    riccati: &RiccatiSolution,
    spec: &ProblemSpec,
    grid: &TimeGrid,
) -> Result<(DVector<f64>, f64)> {
    let coeffs = GridCoefficients::new(spec, grid)?;
    check_riccati(&coeffs, riccati)?;
    if j >= grid.len() || phi.len() != grid.len() || phi.shape() != (spec.dims.n, 1) {
        return Err(Error::Shape("φ table or node index does not match the grid".into()));
    }
    let engine = AuxEngine::new(spec, &coeffs, riccati, Execution::Sequential);
    let upsilon = coeffs.affine_gains(phi);
    let c = affine_drift(&coeffs, &upsilon);
    let (s, w) = engine.sbb_omega_node(j, &upsilon, &c);
    Ok((DVector::from_vec(s), w))
}

pub(crate) fn solve_phi_with(
    spec: &ProblemSpec,
    coeffs: &GridCoefficients,
    riccati: &RiccatiSolution,
    opts: &SolveOptions,
    init: &InitialGuess,
) -> Result<PhiSolution> {
    check_riccati(coeffs, riccati)?;
    let n = coeffs.n;
    let len = coeffs.grid.len();
    let g_t = coeffs.g_lin.slice(len - 1).to_vec();
    let mut start = match init {
        InitialGuess::Zero => MatrixSeries::zeros(len, n, 1),
        InitialGuess::Terminal => MatrixSeries::from_fn(len, n, 1, |_, o| o.copy_from_slice(&g_t)),
        InitialGuess::ScaledTerminal(c) => {
            MatrixSeries::from_fn(len, n, 1, |_, o| o.iter_mut().zip(&g_t).for_each(|(a, b)| *a = c * b))
        }
        InitialGuess::Table(t) => {
            if t.len() != len || t.shape() != (n, 1) {
                return Err(Error::Shape(
                    "initial φ table does not match grid and state dimension".into(),
                ));
            }
            t.clone()
        }
    };
    start.slice_mut(len - 1).copy_from_slice(&g_t);
    let engine = AuxEngine::new(spec, coeffs, riccati, opts.execution);
    let (phi, diagnostics) = damped_fixed_point(
        "auxiliary φ iteration",
        start,
        opts,
        |phi| {
            let upsilon = coeffs.affine_gains(phi);
            let (sbb, _) = engine.sbb_omega_all(&upsilon);
            Ok(engine.integrate_phi(&riccati.p, &sbb))
        },
        |phi| phi.slice_mut(len - 1).copy_from_slice(&g_t),
    )?;
    let upsilon = coeffs.affine_gains(&phi);
    let (sbb, omega) = engine.sbb_omega_all(&upsilon);
    Ok(PhiSolution {
        phi,
        upsilon,
        sbb,
        omega,
        diagnostics,
    })
}

/// Picard iteration for φ; returns φ with the final Υ, 𝕊 and ω.
pub fn solve_phi(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    riccati: &RiccatiSolution,
    opts: &SolveOptions,
    init: &InitialGuess,
) -> Result<PhiSolution> {
    let coeffs = GridCoefficients::new(spec, grid)?;
    solve_phi_with(spec, &coeffs, riccati, opts, init)
}

pub(crate) fn psi_with(coeffs: &GridCoefficients, phi: &PhiSolution) -> Vec<f64> {
    let (n, m) = (coeffs.n, coeffs.m);
    let len = coeffs.grid.len();
    let half = 0.5 * coeffs.grid.step();
    let c = affine_drift(coeffs, &phi.upsilon);
    let mut mu = vec![0.0; m];
    let r: Vec<f64> = (0..len)
        .map(|k| {
            let ups = phi.upsilon.slice(k);
            matmul(coeffs.m_diag.slice(k), m, m, ups, 1, &mut mu);
            let rho = coeffs.rho.slice(k);
            let quad: f64 = (0..m).map(|i| (mu[i] - 2.0 * rho[i]) * ups[i]).sum();
            2.0 * dot(&phi.phi.slice(k)[..n], c.slice(k)) - phi.omega[k] + quad
        })
        .collect();
    let mut psi = vec![0.0; len];
    for i in (0..len - 1).rev() {
        psi[i] = psi[i + 1] + half * (r[i] + r[i + 1]);
    }
    psi
}

/// `ψ(t_i) = ∫_{t_i}^T [2⟨φ, b − BΥ⟩ − ω + ⟨MΥ − 2ρ, Υ⟩] dτ` by the trapezoid rule.
pub fn solve_psi(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    riccati: &RiccatiSolution,
    phi: &PhiSolution,
) -> Result<Vec<f64>> {
    let coeffs = GridCoefficients::new(spec, grid)?;
    check_riccati(&coeffs, riccati)?;
    if phi.phi.len() != grid.len() {
        return Err(Error::Shape("φ solution was computed on a different grid".into()));
    }
    Ok(psi_with(&coeffs, phi))
}

pub(crate) fn solve_auxiliary_with(
    spec: &ProblemSpec,
    coeffs: &GridCoefficients,
    riccati: &RiccatiSolution,
    opts: &SolveOptions,
) -> Result<AuxiliarySolution> {
    let phi = solve_phi_with(spec, coeffs, riccati, opts, &InitialGuess::Zero)?;
    let psi = psi_with(coeffs, &phi);
    let nodes = coeffs.grid.len();
    let btilde = if nodes * (nodes + 1) / 2 * coeffs.n <= opts.dense_budget {
        let c = affine_drift(coeffs, &phi.upsilon);
        Some(build_btilde(riccati.closed_loop.factors(), &c, coeffs.grid.step()))
    } else {
        None
    };
    Ok(AuxiliarySolution {
        phi: phi.phi,
        psi,
        upsilon: phi.upsilon,
        sbb: phi.sbb,
        omega: phi.omega,
        btilde,
        diagnostics: AuxDiagnostics {
            phi_iteration: phi.diagnostics,
        },
    })
}

/// φ, ψ and the derived tables for a converged Riccati solution.
pub fn solve_auxiliary(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    riccati: &RiccatiSolution,
    opts: &SolveOptions,
) -> Result<AuxiliarySolution> {
    let coeffs = GridCoefficients::new(spec, grid)?;
    solve_auxiliary_with(spec, &coeffs, riccati, opts)
}
