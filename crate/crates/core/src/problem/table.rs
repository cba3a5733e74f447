//! Tabulated fields: piecewise-linear time series and lower-triangular
//! two-time tables with finite-difference t-derivatives.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::series::MatrixSeries;

/// Matrix-valued samples on strictly increasing times, linearly interpolated
/// and held constant outside the sampled range.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeTable {
    times: Vec<f64>,
    values: MatrixSeries,
}

impl TimeTable {
    pub fn new(times: Vec<f64>, values: &[DMatrix<f64>]) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::InvalidArgument(
                "tabulated field needs at least 2 samples".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "table times must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self {
            times,
            values: MatrixSeries::from_matrices(values)?,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &MatrixSeries {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let ts = &self.times;
        if t <= ts[0] {
            out.copy_from_slice(self.values.slice(0));
            return;
        }
        let last = ts.len() - 1;
        if t >= ts[last] {
            out.copy_from_slice(self.values.slice(last));
            return;
        }
        let i = ts.partition_point(|&x| x <= t) - 1;
        let alpha = (t - ts[i]) / (ts[i + 1] - ts[i]);
        self.values.lerp_into(i, alpha, out);
    }

    /// Second-order nodal derivative (three-point Lagrange stencils), itself
    /// interpolated linearly.
    pub fn derivative(&self) -> Result<Self> {
        let ts = &self.times;
        let k = ts.len();
        if k < 3 {
            return Err(Error::InvalidArgument(
                "a tabulated field needs at least 3 samples to be differentiated".into(),
            ));
        }
        let (r, c) = self.shape();
        let values = MatrixSeries::from_fn(k, r, c, |i, out| {
            let base = i.saturating_sub(1).min(k - 3);
            let nodes = [ts[base], ts[base + 1], ts[base + 2]];
            let w = lagrange3_derivative_weights(nodes, ts[i]);
            let f0 = self.values.slice(base);
            let f1 = self.values.slice(base + 1);
            let f2 = self.values.slice(base + 2);
            for e in 0..out.len() {
                out[e] = w[0] * f0[e] + w[1] * f1[e] + w[2] * f2[e];
            }
        });
        Ok(Self {
            times: self.times.clone(),
            values,
        })
    }
}

/// Weights `w` such that `Σ w_j f(x_j)` is the derivative at `at` of the
/// quadratic interpolant through the three nodes.
fn lagrange3_derivative_weights(x: [f64; 3], at: f64) -> [f64; 3] {
    let mut w = [0.0; 3];
    for j in 0..3 {
        let (a, b) = match j {
            0 => (x[1], x[2]),
            1 => (x[0], x[2]),
            _ => (x[0], x[1]),
        };
        w[j] = ((at - a) + (at - b)) / ((x[j] - a) * (x[j] - b));
    }
    w
}

/// Values of a two-time field on the lower triangle `t_i ≤ s_j` of a uniform
/// grid, without derivative information.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedValues {
    start: f64,
    spacing: f64,
    points: usize,
    rows: usize,
    cols: usize,
    /// Packed by `s` index: entry (i, j), i ≤ j, lives at `j(j+1)/2 + i`.
    packed: Vec<f64>,
}

impl TabulatedValues {
    /// Samples `f(i, j, out)` for every `i ≤ j` on the uniform grid `times`.
    pub fn from_fn(
        times: &[f64],
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Result<Self> {
        let (start, spacing) = uniform_spacing(times)?;
        let points = times.len();
        let sz = rows * cols;
        let mut packed = vec![0.0; points * (points + 1) / 2 * sz];
        for j in 0..points {
            for i in 0..=j {
                let off = (j * (j + 1) / 2 + i) * sz;
                f(i, j, &mut packed[off..off + sz]);
            }
        }
        Ok(Self {
            start,
            spacing,
            points,
            rows,
            cols,
            packed,
        })
    }

    /// `rows_by_t[i]` lists the column-major values at `(t_i, t_j)` for `j = i..`.
    pub fn from_rows(times: &[f64], rows: usize, cols: usize, rows_by_t: &[Vec<Vec<f64>>]) -> Result<Self> {
        let k = times.len();
        if rows_by_t.len() != k {
            return Err(Error::Shape(format!("{} table rows for {} times", rows_by_t.len(), k)));
        }
        for (i, row) in rows_by_t.iter().enumerate() {
            if row.len() != k - i {
                return Err(Error::Shape(format!(
                    "table row {i} has {} entries, expected {} (s ≥ t only)",
                    row.len(),
                    k - i
                )));
            }
            if let Some(bad) = row.iter().position(|v| v.len() != rows * cols) {
                return Err(Error::Shape(format!(
                    "table entry ({i}, {}) has {} components, expected {}",
                    i + bad,
                    row[bad].len(),
                    rows * cols
                )));
            }
        }
        Self::from_fn(times, rows, cols, |i, j, out| out.copy_from_slice(&rows_by_t[i][j - i]))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.start + i as f64 * self.spacing).collect()
    }

    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        let sz = self.rows * self.cols;
        let off = (j * (j + 1) / 2 + i) * sz;
        &self.packed[off..off + sz]
    }

    /// `rows_by_t` layout, the inverse of [`TabulatedValues::from_rows`].
    pub fn to_rows(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.points)
            .map(|i| (i..self.points).map(|j| self.entry(i, j).to_vec()).collect())
            .collect()
    }

    fn with_packed(&self, packed: Vec<f64>) -> Self {
        Self { packed, ..self.clone() }
    }

    /// Piecewise-linear interpolation: bilinear on cells strictly above the
    /// diagonal, linear on the diagonal half-cells.
    pub fn eval_into(&self, t: f64, s: f64, out: &mut [f64]) {
        let kmax = (self.points - 1) as f64;
        let v = ((s - self.start) / self.spacing).clamp(0.0, kmax);
        let u = ((t - self.start) / self.spacing).clamp(0.0, v);
        let last = self.points - 2;
        let i = (u.floor() as usize).min(last);
        let j = (v.floor() as usize).min(last);
        let a = u - i as f64;
        let b = v - j as f64;
        if i < j {
            let f00 = self.entry(i, j);
            let f10 = self.entry(i + 1, j);
            let f01 = self.entry(i, j + 1);
            let f11 = self.entry(i + 1, j + 1);
            for e in 0..out.len() {
                out[e] =
                    (1.0 - a) * (1.0 - b) * f00[e] + a * (1.0 - b) * f10[e] + (1.0 - a) * b * f01[e] + a * b * f11[e];
            }
        } else {
            let a = a.min(b);
            let fd = self.entry(i, i);
            let fu = self.entry(i, i + 1);
            let fe = self.entry(i + 1, i + 1);
            for e in 0..out.len() {
                out[e] = fd[e] + a * (fe[e] - fu[e]) + b * (fu[e] - fd[e]);
            }
        }
    }
}

fn uniform_spacing(times: &[f64]) -> Result<(f64, f64)> {
    if times.len() < 2 {
        return Err(Error::InvalidArgument(
            "two-time table needs at least 2 grid points".into(),
        ));
    }
    let start = times[0];
    let spacing = (times[times.len() - 1] - start) / (times.len() - 1) as f64;
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidArgument("two-time table times must be increasing".into()));
    }
    for (i, t) in times.iter().enumerate() {
        if (t - (start + i as f64 * spacing)).abs() > 1e-9 * spacing.max(1.0) {
            return Err(Error::InvalidArgument(
                "two-time table times must be uniformly spaced".into(),
            ));
        }
    }
    Ok((start, spacing))
}

/// Two-time table carrying both values and first-argument derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoTimeTable {
    values: TabulatedValues,
    derivative: TabulatedValues,
}

impl TwoTimeTable {
    pub fn values(&self) -> &TabulatedValues {
        &self.values
    }

    pub fn derivative(&self) -> &TabulatedValues {
        &self.derivative
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn value_into(&self, t: f64, s: f64, out: &mut [f64]) {
        self.values.eval_into(t, s, out);
    }

    pub fn dt_into(&self, t: f64, s: f64, out: &mut [f64]) {
        self.derivative.eval_into(t, s, out);
    }
}

/// Differentiates a tabulated two-time field in its first argument.
///
/// Along each column `s = s_j` the derivative uses central differences in the
/// interior and second-order one-sided stencils at `t = 0` and `t = s`.
/// Columns with fewer than three admissible `t` samples (`j < 2`) are filled
/// by linear extrapolation in `s`. The step is the table spacing.
pub fn finite_diff_t(values: &TabulatedValues) -> Result<TwoTimeTable> {
    let k = values.points;
    if k < 3 {
        return Err(Error::InvalidArgument(format!(
            "finite differences in t need at least 3 grid points, got {k}"
        )));
    }
    let sz = values.rows * values.cols;
    let h2 = 2.0 * values.spacing;
    let mut packed = vec![0.0; values.packed.len()];
    let off = |i: usize, j: usize| (j * (j + 1) / 2 + i) * sz;
    for j in 2..k {
        for i in 0..=j {
            for e in 0..sz {
                let f = |ii: usize| values.entry(ii, j)[e];
                packed[off(i, j) + e] = if i == 0 {
                    (-3.0 * f(0) + 4.0 * f(1) - f(2)) / h2
                } else if i == j {
                    (3.0 * f(j) - 4.0 * f(j - 1) + f(j - 2)) / h2
                } else {
                    (f(i + 1) - f(i - 1)) / h2
                };
            }
        }
    }
    for j in (0..2).rev() {
        for i in 0..=j {
            for e in 0..sz {
                let d1 = packed[off(i, j + 1) + e];
                packed[off(i, j) + e] = if j + 2 < k {
                    2.0 * d1 - packed[off(i, j + 2) + e]
                } else {
                    d1
                };
            }
        }
    }
    Ok(TwoTimeTable {
        values: values.clone(),
        derivative: values.with_packed(packed),
    })
}
