//! Contiguous storage for grid-tabulated matrices and the small dense kernels
//! used in the O(N²) loops.
//!
//! Every matrix is stored column-major, matching nalgebra's layout, so a
//! slice can be viewed as a [`DMatrixView`] without copying.

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};

/// A sequence of equally shaped matrices, typically one per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSeries {
    rows: usize,
    cols: usize,
    len: usize,
    data: Vec<f64>,
}

impl MatrixSeries {
    pub fn zeros(len: usize, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            len,
            data: vec![0.0; len * rows * cols],
        }
    }

    /// Builds a series by filling each entry's column-major buffer.
    pub fn from_fn(len: usize, rows: usize, cols: usize, mut f: impl FnMut(usize, &mut [f64])) -> Self {
        let mut s = Self::zeros(len, rows, cols);
        for i in 0..len {
            f(i, s.slice_mut(i));
        }
        s
    }

    /// Builds a series from matrices, checking that shapes agree.
    pub fn from_matrices(mats: &[DMatrix<f64>]) -> Result<Self> {
        let Some(first) = mats.first() else {
            return Err(Error::InvalidArgument("empty matrix series".into()));
        };
        let (rows, cols) = first.shape();
        let mut data = Vec::with_capacity(mats.len() * rows * cols);
        for (i, m) in mats.iter().enumerate() {
            if m.shape() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "entry {i} is {:?}, expected {:?}",
                    m.shape(),
                    (rows, cols)
                )));
            }
            data.extend_from_slice(m.as_slice());
        }
        Ok(Self {
            rows,
            cols,
            len: mats.len(),
            data,
        })
    }

    pub(crate) fn from_flat(len: usize, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), len * rows * cols);
        Self { rows, cols, len, data }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let sz = self.rows * self.cols;
        &self.data[i * sz..(i + 1) * sz]
    }

    pub fn slice_mut(&mut self, i: usize) -> &mut [f64] {
        let sz = self.rows * self.cols;
        &mut self.data[i * sz..(i + 1) * sz]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn view(&self, i: usize) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(self.slice(i), self.rows, self.cols)
    }

    pub fn matrix(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rows, self.cols, self.slice(i))
    }

    /// Entry `i` as a vector; intended for single-column series.
    pub fn vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.slice(i))
    }

    pub fn set(&mut self, i: usize, m: &DMatrix<f64>) {
        self.slice_mut(i).copy_from_slice(m.as_slice());
    }

    /// Linear interpolation between entries `i` and `i + 1` with weight `alpha` on `i + 1`.
    pub fn lerp(&self, i: usize, alpha: f64) -> DMatrix<f64> {
        if alpha == 0.0 || i + 1 >= self.len {
            return self.matrix(i.min(self.len - 1));
        }
        let a = self.slice(i);
        let b = self.slice(i + 1);
        DMatrix::from_iterator(
            self.rows,
            self.cols,
            a.iter().zip(b).map(|(x, y)| (1.0 - alpha) * x + alpha * y),
        )
    }

    pub(crate) fn lerp_into(&self, i: usize, alpha: f64, out: &mut [f64]) {
        let a = self.slice(i);
        if alpha == 0.0 || i + 1 >= self.len {
            out.copy_from_slice(a);
            return;
        }
        let b = self.slice(i + 1);
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o = (1.0 - alpha) * x + alpha * y;
        }
    }

    /// Entrywise sup-norm distance.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "series shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Entrywise sup-norm.
    pub fn sup_norm(&self) -> f64 {
        self.data.iter().map(|a| a.abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `(1 − θ)·self + θ·other`.
    pub fn blend(&mut self, other: &Self, theta: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = (1.0 - theta) * *a + theta * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }
}

/// `out = a·b` for column-major `a` (ar×ac) and `b` (ac×bc).
#[inline]
pub(crate) fn matmul(a: &[f64], ar: usize, ac: usize, b: &[f64], bc: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), ar * ac);
    debug_assert_eq!(b.len(), ac * bc);
    out[..ar * bc].iter_mut().for_each(|x| *x = 0.0);
    for c in 0..bc {
        let oc = &mut out[c * ar..(c + 1) * ar];
        for k in 0..ac {
            let bkc = b[c * ac + k];
            if bkc != 0.0 {
                let ak = &a[k * ar..(k + 1) * ar];
                for (o, x) in oc.iter_mut().zip(ak) {
                    *o += x * bkc;
                }
            }
        }
    }
}

/// `out = aᵀ·b` for column-major `a` (r×ac) and `b` (r×bc).
#[inline]
pub(crate) fn tmatmul(a: &[f64], r: usize, ac: usize, b: &[f64], bc: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), r * ac);
    debug_assert_eq!(b.len(), r * bc);
    for c in 0..bc {
        let bcol = &b[c * r..(c + 1) * r];
        for i in 0..ac {
            let acol = &a[i * r..(i + 1) * r];
            out[c * ac + i] = acol.iter().zip(bcol).map(|(x, y)| x * y).sum();
        }
    }
}

/// `acc += w · xᵀ k x` with `x` r×c and `k` r×r; `tmp` needs r·c entries.
#[inline]
pub(crate) fn add_congruence(w: f64, x: &[f64], r: usize, c: usize, k: &[f64], tmp: &mut [f64], acc: &mut [f64]) {
    matmul(k, r, r, x, c, tmp);
    for j in 0..c {
        let tcol = &tmp[j * r..(j + 1) * r];
        for i in 0..c {
            let xcol = &x[i * r..(i + 1) * r];
            let v: f64 = xcol.iter().zip(tcol).map(|(a, b)| a * b).sum();
            acc[j * c + i] += w * v;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Replaces a square column-major matrix by its symmetric part and returns
/// the largest entrywise asymmetry before symmetrization.
pub(crate) fn symmetrize(a: &mut [f64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            let x = a[j * n + i];
            let y = a[i * n + j];
            worst = worst.max((x - y).abs());
            let m = 0.5 * (x + y);
            a[j * n + i] = m;
            a[i * n + j] = m;
        }
    }
    worst
}

pub(crate) fn identity_into(out: &mut [f64], n: usize) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_kernels_match_nalgebra() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 0.5, 2.0, -3.0, 1.0]);
        let mut out = vec![0.0; 4];
        matmul(a.as_slice(), 2, 3, b.as_slice(), 2, &mut out);
        assert_eq!(out, (&a * &b).as_slice());

        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mut out = vec![0.0; 6];
        tmatmul(c.as_slice(), 2, 2, a.as_slice(), 3, &mut out);
        assert_eq!(out, (c.transpose() * &a).as_slice());

        let k = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let mut acc = vec![1.0; 4];
        let mut tmp = vec![0.0; 6];
        add_congruence(0.5, b.as_slice(), 3, 2, k.as_slice(), &mut tmp, &mut acc);
        let expect = DMatrix::from_element(2, 2, 1.0) + (b.transpose() * &k * &b) * 0.5;
        for (x, y) in acc.iter().zip(expect.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetrize_reports_asymmetry() {
        let mut a = vec![1.0, 2.0, 2.5, 3.0];
        let w = symmetrize(&mut a, 2);
        assert_eq!(w, 0.5);
        assert_eq!(a, vec![1.0, 2.25, 2.25, 3.0]);
    }
}
