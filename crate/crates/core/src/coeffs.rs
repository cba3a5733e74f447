//! Problem coefficients sampled once per (problem, grid) pair.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::grid::{DynamicsSamples, TimeGrid};
use crate::problem::{ProblemSpec, TimeField, TwoTimeField};
use crate::series::MatrixSeries;

pub(crate) struct GridCoefficients {
    pub n: usize,
    pub m: usize,
    pub grid: TimeGrid,
    pub dynamics: DynamicsSamples,
    /// Diagonal kernels `X(t_i, t_i)`.
    pub q: MatrixSeries,
    pub s: MatrixSeries,
    pub m_diag: MatrixSeries,
    pub q_lin: MatrixSeries,
    pub rho: MatrixSeries,
    /// Diagonal `q`, `ρ` at interval midpoints.
    pub q_lin_mid: MatrixSeries,
    pub rho_mid: MatrixSeries,
    pub g: MatrixSeries,
    pub g_dt: MatrixSeries,
    pub g_lin: MatrixSeries,
    pub g_lin_dt: MatrixSeries,
    chol: Vec<Cholesky<f64, Dyn>>,
    /// Q_t, S_t, M_t and Ġ vanish by construction.
    pub quadratic_consistent: bool,
    /// q_t, ρ_t and ġ vanish by construction.
    pub linear_consistent: bool,
}

fn diag(f: &TwoTimeField, times: impl Iterator<Item = f64>, len: usize) -> MatrixSeries {
    let (r, c) = f.shape();
    let ts: Vec<f64> = times.collect();
    MatrixSeries::from_fn(len, r, c, |i, o| f.value_into(ts[i], ts[i], o))
}

fn nodal(f: &TimeField, grid: &TimeGrid) -> MatrixSeries {
    let (r, c) = f.shape();
    MatrixSeries::from_fn(grid.len(), r, c, |i, o| f.eval_into(grid.node(i), o))
}

fn symmetrize_series(s: &mut MatrixSeries) {
    let n = s.rows();
    for i in 0..s.len() {
        crate::series::symmetrize(s.slice_mut(i), n);
    }
}

impl GridCoefficients {
    pub fn new(spec: &ProblemSpec, grid: &TimeGrid) -> Result<Self> {
        if (grid.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
            return Err(Error::InvalidArgument(format!(
                "grid horizon {} differs from problem horizon {}",
                grid.horizon(),
                spec.horizon
            )));
        }
        let (n, m) = (spec.dims.n, spec.dims.m);
        let len = grid.len();
        let c = &spec.costs;
        let nodes = || (0..len).map(|i| grid.node(i));
        let mids = || (0..len - 1).map(|i| grid.midpoint(i));
        let mut q = diag(&c.q, nodes(), len);
        let mut m_diag = diag(&c.m, nodes(), len);
        symmetrize_series(&mut q);
        symmetrize_series(&mut m_diag);
        let mut g = nodal(&spec.terminal.g, grid);
        let mut g_dt = nodal(&spec.terminal.g_dt, grid);
        symmetrize_series(&mut g);
        symmetrize_series(&mut g_dt);
        let chol = (0..len)
            .map(|i| Cholesky::new(m_diag.matrix(i)).ok_or(Error::NotPositiveDefinite { t: grid.node(i) }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n,
            m,
            grid: *grid,
            dynamics: DynamicsSamples::new(&spec.dynamics, grid),
            q,
            s: diag(&c.s, nodes(), len),
            m_diag,
            q_lin: diag(&c.q_lin, nodes(), len),
            rho: diag(&c.rho, nodes(), len),
            q_lin_mid: diag(&c.q_lin, mids(), len - 1),
            rho_mid: diag(&c.rho, mids(), len - 1),
            g,
            g_dt,
            g_lin: nodal(&spec.terminal.g_lin, grid),
            g_lin_dt: nodal(&spec.terminal.g_lin_dt, grid),
            chol,
            quadratic_consistent: c.q.dt_vanishes()
                && c.s.dt_vanishes()
                && c.m.dt_vanishes()
                && spec.terminal.g_dt.is_zero(),
            linear_consistent: c.q_lin.dt_vanishes() && c.rho.dt_vanishes() && spec.terminal.g_lin_dt.is_zero(),
        })
    }

    /// Solves `M(t_i,t_i) X = rhs`.
    pub fn solve_m(&self, i: usize, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol[i].solve(rhs)
    }

    /// `Γ_i = M⁻¹(BᵀP_i + S)` for every node.
    pub fn gains(&self, p: &MatrixSeries) -> MatrixSeries {
        let mut out = MatrixSeries::zeros(p.len(), self.m, self.n);
        for i in 0..p.len() {
            let rhs = self.dynamics.b.view(i).transpose() * p.view(i) + self.s.view(i);
            out.set(i, &self.solve_m(i, &rhs));
        }
        out
    }

    /// `Υ_i = M⁻¹(Bᵀφ_i + ρ)` for every node.
    pub fn affine_gains(&self, phi: &MatrixSeries) -> MatrixSeries {
        let mut out = MatrixSeries::zeros(phi.len(), self.m, 1);
        for i in 0..phi.len() {
            let rhs = self.dynamics.b.view(i).transpose() * phi.view(i) + self.rho.view(i);
            out.set(i, &self.solve_m(i, &rhs));
        }
        out
    }
}
