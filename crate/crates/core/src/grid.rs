//! Uniform time grid, trapezoid quadrature and state-transition matrices.

use std::ops::{Add, Div, Mul};

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};
use crate::problem::DynamicsField;
use crate::series::{identity_into, matmul, MatrixSeries};

/// Uniform partition `t_i = iT/N`, `i = 0..=N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    intervals: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, intervals: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if intervals < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs N ≥ 2 intervals, got {intervals}"
            )));
        }
        Ok(Self { horizon, intervals })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of intervals N.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Number of nodes, N + 1.
    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.intervals as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.intervals {
            self.horizon
        } else {
            self.horizon * i as f64 / self.intervals as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.horizon * (i as f64 + 0.5) / self.intervals as f64
    }

    /// Cell index `i` and weight `α ∈ [0,1)` with `t = (1−α)t_i + αt_{i+1}`; at
    /// `t = T` returns `(N, 0)`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let slack = 1e-12 * self.horizon;
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        let u = (t / self.step()).clamp(0.0, self.intervals as f64);
        let i = u.floor() as usize;
        if i >= self.intervals {
            return Ok((self.intervals, 0.0));
        }
        let alpha = u - i as f64;
        // Snap roundoff next to a node.
        if alpha > 1.0 - 1e-10 {
            return Ok((i + 1, 0.0));
        }
        Ok((i, if alpha < 1e-10 { 0.0 } else { alpha }))
    }

    /// Nearest node index to `t` (clamped to the grid).
    pub fn nearest(&self, t: f64) -> usize {
        ((t / self.step()).round().max(0.0) as usize).min(self.intervals)
    }

    /// Trapezoid weight of node `k` in the integral over `[t_a, t_b]`.
    #[inline]
    pub fn weight(&self, a: usize, b: usize, k: usize) -> f64 {
        if a == b || k < a || k > b {
            0.0
        } else if k == a || k == b {
            0.5 * self.step()
        } else {
            self.step()
        }
    }

    /// Composite trapezoid rule over consecutive nodes; `samples[0]` is the
    /// value at the left end of the range. The weighted sum is scaled by
    /// `T/N` once, so constant integrands are integrated exactly.
    pub fn quadrature<T>(&self, samples: &[T]) -> Result<T>
    where
        T: Clone + Add<Output = T> + Mul<f64, Output = T> + Div<f64, Output = T>,
    {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidArgument("quadrature over an empty node range".into()));
        };
        if samples.len() > self.len() {
            return Err(Error::InvalidArgument("quadrature range longer than the grid".into()));
        }
        if samples.len() == 1 {
            return Ok(first.clone() * 0.0);
        }
        let last = samples.len() - 1;
        let mut acc = first.clone() * 0.5 + samples[last].clone() * 0.5;
        for x in &samples[1..last] {
            acc = acc + x.clone();
        }
        Ok(acc * self.horizon / self.intervals as f64)
    }
}

/// Which system a [`TransitionTable`] propagates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransitionFlavor {
    /// `dΦ/ds = A(s)Φ`.
    OpenLoop,
    /// `dΦ/ds = (A(s) − B(s)Γ(s))Φ`.
    ClosedLoop,
}

/// Default cap on the number of `f64` entries kept for all-pairs storage.
pub const DEFAULT_DENSE_BUDGET: usize = 1 << 24;

/// Propagators `Φ(i,j)` from `t_j` to `t_i` for `j ≤ i`.
///
/// The per-step RK4 factors `F_k = Φ(k+1,k)` are always kept; all pairs are
/// stored only when they fit the entry budget, and are otherwise composed on
/// demand. Both routes multiply the same factors in the same order, so they
/// give identical results.
#[derive(Clone, Debug)]
pub struct TransitionTable {
    flavor: TransitionFlavor,
    n: usize,
    factors: MatrixSeries,
    dense: Option<Vec<f64>>,
}

impl TransitionTable {
    pub(crate) fn from_factors(flavor: TransitionFlavor, factors: MatrixSeries, budget: usize) -> Self {
        let n = factors.rows();
        let nodes = factors.len() + 1;
        let mut table = Self {
            flavor,
            n,
            factors,
            dense: None,
        };
        if nodes * (nodes + 1) / 2 * n * n <= budget {
            let mut dense = Vec::with_capacity(nodes * (nodes + 1) / 2 * n * n);
            for j in 0..nodes {
                table.walk_column(j, |_, phi| dense.extend_from_slice(phi));
            }
            table.dense = Some(dense);
        }
        table
    }

    pub fn flavor(&self) -> TransitionFlavor {
        self.flavor
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of grid nodes covered.
    pub fn nodes(&self) -> usize {
        self.factors.len() + 1
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    /// One-step factor `Φ(k+1, k)`.
    pub fn factor(&self, k: usize) -> DMatrixView<'_, f64> {
        self.factors.view(k)
    }

    pub(crate) fn factors(&self) -> &MatrixSeries {
        &self.factors
    }

    pub fn get(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        let nodes = self.nodes();
        if j > i || i >= nodes {
            return Err(Error::InvalidArgument(format!(
                "transition Φ({i},{j}) requires j ≤ i < {nodes}"
            )));
        }
        let n = self.n;
        if let Some(d) = &self.dense {
            let off = self.column_offset(j) + (i - j) * n * n;
            return Ok(DMatrix::from_column_slice(n, n, &d[off..off + n * n]));
        }
        let mut out = DMatrix::identity(n, n);
        let mut tmp = vec![0.0; n * n];
        for k in j..i {
            matmul(self.factors.slice(k), n, n, out.as_slice(), n, &mut tmp);
            out.as_mut_slice().copy_from_slice(&tmp);
        }
        Ok(out)
    }

    /// Start of column `j` in the dense store; column `c` holds `nodes − c` matrices.
    fn column_offset(&self, j: usize) -> usize {
        let nodes = self.nodes();
        (j * nodes - j * j.saturating_sub(1) / 2) * self.n * self.n
    }

    /// Calls `f(i, Φ(i,j))` for `i = j..=N`, in order.
    pub fn walk_column(&self, j: usize, mut f: impl FnMut(usize, &[f64])) {
        let n = self.n;
        let nodes = self.nodes();
        if let Some(d) = &self.dense {
            let off = self.column_offset(j);
            for i in j..nodes {
                let o = off + (i - j) * n * n;
                f(i, &d[o..o + n * n]);
            }
            return;
        }
        let mut phi = vec![0.0; n * n];
        let mut tmp = vec![0.0; n * n];
        identity_into(&mut phi, n);
        for i in j..nodes {
            f(i, &phi);
            if i + 1 < nodes {
                matmul(self.factors.slice(i), n, n, &phi, n, &mut tmp);
                std::mem::swap(&mut phi, &mut tmp);
            }
        }
    }
}

/// Samples of `A`, `B`, `b` at nodes and interval midpoints.
#[derive(Clone, Debug)]
pub(crate) struct DynamicsSamples {
    pub a: MatrixSeries,
    pub b: MatrixSeries,
    pub bias: MatrixSeries,
    pub a_mid: MatrixSeries,
    pub b_mid: MatrixSeries,
    pub bias_mid: MatrixSeries,
}

impl DynamicsSamples {
    pub fn new(d: &DynamicsField, grid: &TimeGrid) -> Self {
        let (n, m) = d.b.shape();
        let nodes = grid.len();
        let sample = |f: &crate::problem::TimeField, r: usize, c: usize, mid: bool| {
            let len = if mid { nodes - 1 } else { nodes };
            MatrixSeries::from_fn(len, r, c, |i, o| {
                f.eval_into(if mid { grid.midpoint(i) } else { grid.node(i) }, o)
            })
        };
        Self {
            a: sample(&d.a, n, n, false),
            b: sample(&d.b, n, m, false),
            bias: sample(&d.bias, n, 1, false),
            a_mid: sample(&d.a, n, n, true),
            b_mid: sample(&d.b, n, m, true),
            bias_mid: sample(&d.bias, n, 1, true),
        }
    }
}

/// RK4 one-step factors of `dΦ/ds = (A − BΓ)Φ`, with `Γ` averaged at the
/// half step.
pub(crate) fn step_factors(dyn_: &DynamicsSamples, gamma: &MatrixSeries, h: f64) -> MatrixSeries {
    let n = dyn_.a.rows();
    let m = dyn_.b.cols();
    let steps = dyn_.a.len() - 1;
    let nn = n * n;
    let mut out = MatrixSeries::zeros(steps, n, n);
    let mut c0 = vec![0.0; nn];
    let mut cm = vec![0.0; nn];
    let mut c1 = vec![0.0; nn];
    let mut bg = vec![0.0; nn];
    let mut gmid = vec![0.0; m * n];
    let mut stage = vec![0.0; nn];
    let mut k1 = vec![0.0; nn];
    let mut k2 = vec![0.0; nn];
    let mut k3 = vec![0.0; nn];
    let mut k4 = vec![0.0; nn];
    let closed = |a: &[f64], b: &[f64], g: &[f64], bg: &mut [f64], c: &mut [f64]| {
        matmul(b, n, m, g, n, bg);
        for ((ci, ai), bi) in c.iter_mut().zip(a).zip(bg.iter()) {
            *ci = ai - bi;
        }
    };
    // stage = I + w·k
    let shifted = |w: f64, k: &[f64], stage: &mut [f64]| {
        for (s, x) in stage.iter_mut().zip(k) {
            *s = w * x;
        }
        for i in 0..n {
            stage[i * n + i] += 1.0;
        }
    };
    for k in 0..steps {
        for (g, (x, y)) in gmid.iter_mut().zip(gamma.slice(k).iter().zip(gamma.slice(k + 1))) {
            *g = 0.5 * (x + y);
        }
        closed(dyn_.a.slice(k), dyn_.b.slice(k), gamma.slice(k), &mut bg, &mut c0);
        closed(dyn_.a_mid.slice(k), dyn_.b_mid.slice(k), &gmid, &mut bg, &mut cm);
        closed(
            dyn_.a.slice(k + 1),
            dyn_.b.slice(k + 1),
            gamma.slice(k + 1),
            &mut bg,
            &mut c1,
        );
        k1.copy_from_slice(&c0);
        shifted(0.5 * h, &k1, &mut stage);
        matmul(&cm, n, n, &stage, n, &mut k2);
        shifted(0.5 * h, &k2, &mut stage);
        matmul(&cm, n, n, &stage, n, &mut k3);
        shifted(h, &k3, &mut stage);
        matmul(&c1, n, n, &stage, n, &mut k4);
        let f = out.slice_mut(k);
        for e in 0..nn {
            f[e] = h / 6.0 * (k1[e] + 2.0 * k2[e] + 2.0 * k3[e] + k4[e]);
        }
        for i in 0..n {
            f[i * n + i] += 1.0;
        }
    }
    out
}

/// Open-loop propagator `E`: the closed-loop construction with zero gain.
pub fn open_loop_transition(dynamics: &DynamicsField, grid: &TimeGrid) -> Result<TransitionTable> {
    let (n, m) = dynamics.b.shape();
    let gamma = MatrixSeries::zeros(grid.len(), m, n);
    let mut t = closed_loop_transition(dynamics, &gamma, grid)?;
    t.flavor = TransitionFlavor::OpenLoop;
    Ok(t)
}

/// Closed-loop propagator `𝔼` of `A − BΓ`.
pub fn closed_loop_transition(
    dynamics: &DynamicsField,
    gamma: &MatrixSeries,
    grid: &TimeGrid,
) -> Result<TransitionTable> {
    let (n, m) = dynamics.b.shape();
    if gamma.shape() != (m, n) || gamma.len() != grid.len() {
        return Err(Error::Shape(format!(
            "gain table is {} entries of {:?}, expected {} entries of {:?}",
            gamma.len(),
            gamma.shape(),
            grid.len(),
            (m, n)
        )));
    }
    let samples = DynamicsSamples::new(dynamics, grid);
    let factors = step_factors(&samples, gamma, grid.step());
    Ok(TransitionTable::from_factors(
        TransitionFlavor::ClosedLoop,
        factors,
        DEFAULT_DENSE_BUDGET,
    ))
}
