use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::kernel::DiscountKernel;
use super::table::{TimeTable, TwoTimeTable};

type TimeFn = dyn Fn(f64, &mut [f64]) + Send + Sync;
type TwoTimeFn = dyn Fn(f64, f64, &mut [f64]) + Send + Sync;

/// A matrix- or vector-valued function of one time argument. Vectors are
/// `n×1` matrices. Evaluation writes a column-major buffer.
#[derive(Clone)]
pub enum TimeField {
    Constant(DMatrix<f64>),
    /// `Σ_k c_k t^k`.
    Polynomial(Vec<DMatrix<f64>>),
    Tabulated(Arc<TimeTable>),
    /// `λ(t, anchor)·base`, or `∂_t λ(t, anchor)·base` when `derivative` is set.
    Discounted {
        kernel: DiscountKernel,
        anchor: f64,
        base: DMatrix<f64>,
        derivative: bool,
    },
    Custom {
        rows: usize,
        cols: usize,
        f: Arc<TimeFn>,
    },
}

impl fmt::Debug for TimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Self::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            Self::Tabulated(t) => f.debug_tuple("Tabulated").field(t).finish(),
            Self::Discounted {
                kernel,
                anchor,
                base,
                derivative,
            } => f
                .debug_struct("Discounted")
                .field("kernel", kernel)
                .field("anchor", anchor)
                .field("base", base)
                .field("derivative", derivative)
                .finish(),
            Self::Custom { rows, cols, .. } => write!(f, "Custom({rows}x{cols})"),
        }
    }
}

impl TimeField {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self::Constant(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::Constant(DMatrix::zeros(rows, cols))
    }

    pub fn polynomial(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = coeffs.first() else {
            return Err(Error::InvalidArgument(
                "polynomial field needs at least one coefficient".into(),
            ));
        };
        if coeffs.iter().any(|c| c.shape() != first.shape()) {
            return Err(Error::Shape("polynomial coefficients differ in shape".into()));
        }
        Ok(Self::Polynomial(coeffs))
    }

    pub fn custom(rows: usize, cols: usize, f: impl Fn(f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        Self::Custom {
            rows,
            cols,
            f: Arc::new(f),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Constant(m) => m.shape(),
            Self::Polynomial(c) => c[0].shape(),
            Self::Tabulated(t) => t.shape(),
            Self::Discounted { base, .. } => base.shape(),
            Self::Custom { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self {
            Self::Constant(m) => out.copy_from_slice(m.as_slice()),
            Self::Polynomial(c) => {
                // Horner from the highest power.
                out.copy_from_slice(c[c.len() - 1].as_slice());
                for ck in c.iter().rev().skip(1) {
                    for (o, x) in out.iter_mut().zip(ck.as_slice()) {
                        *o = *o * t + x;
                    }
                }
            }
            Self::Tabulated(tab) => tab.eval_into(t, out),
            Self::Discounted {
                kernel,
                anchor,
                base,
                derivative,
            } => {
                let w = if *derivative {
                    kernel.dlambda_dt(t, *anchor)
                } else {
                    kernel.lambda(t, *anchor)
                };
                for (o, x) in out.iter_mut().zip(base.as_slice()) {
                    *o = w * x;
                }
            }
            Self::Custom { f, .. } => f(t, out),
        }
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        let (r, c) = self.shape();
        let mut m = DMatrix::zeros(r, c);
        self.eval_into(t, m.as_mut_slice());
        m
    }

    /// The time derivative as another field, exact for the closed-form
    /// variants and second-order finite differences for tables.
    pub fn derivative(&self) -> Result<Self> {
        let (r, c) = self.shape();
        Ok(match self {
            Self::Constant(_) => Self::zeros(r, c),
            Self::Polynomial(cs) => {
                if cs.len() == 1 {
                    Self::zeros(r, c)
                } else {
                    Self::Polynomial(cs.iter().enumerate().skip(1).map(|(k, ck)| ck * k as f64).collect())
                }
            }
            Self::Tabulated(tab) => Self::Tabulated(Arc::new(tab.derivative()?)),
            Self::Discounted {
                kernel,
                anchor,
                base,
                derivative: false,
            } => Self::Discounted {
                kernel: kernel.clone(),
                anchor: *anchor,
                base: base.clone(),
                derivative: true,
            },
            Self::Discounted { derivative: true, .. } | Self::Custom { .. } => {
                return Err(Error::InvalidArgument(
                    "derivative of this field is not available; supply it explicitly".into(),
                ))
            }
        })
    }

    /// Structural zero: true only when the field is identically zero by construction.
    pub fn is_zero(&self) -> bool {
        match self {
            Self::Constant(m) => m.iter().all(|x| *x == 0.0),
            Self::Polynomial(cs) => cs.iter().all(|c| c.iter().all(|x| *x == 0.0)),
            Self::Discounted {
                kernel,
                base,
                derivative,
                ..
            } => base.iter().all(|x| *x == 0.0) || (*derivative && kernel.is_time_consistent()),
            Self::Tabulated(_) | Self::Custom { .. } => false,
        }
    }

    pub(crate) fn symmetrized(self) -> Self {
        let sym = symmetrize_if_close;
        match self {
            Self::Constant(m) if m.is_square() => Self::Constant(sym(m)),
            Self::Polynomial(cs) if cs[0].is_square() => Self::Polynomial(cs.into_iter().map(sym).collect()),
            Self::Discounted {
                kernel,
                anchor,
                base,
                derivative,
            } if base.is_square() => Self::Discounted {
                kernel,
                anchor,
                base: sym(base),
                derivative,
            },
            other => other,
        }
    }
}

/// Symmetrizes `m` unless its asymmetry exceeds `1e-8` relative, in which
/// case it is left untouched so that validation reports it.
fn symmetrize_if_close(m: DMatrix<f64>) -> DMatrix<f64> {
    let scale = m.amax();
    let asym = (&m - m.transpose()).amax();
    if asym > 1e-8 * scale {
        m
    } else {
        (&m + m.transpose()) * 0.5
    }
}

/// A function of the evaluation time `t` and the running time `s ≥ t`, with
/// its first-argument derivative.
#[derive(Clone)]
pub enum TwoTimeField {
    /// `f(t,s) = base(s)`; no dependence on `t`.
    Running(TimeField),
    /// `f(t,s) = λ(t,s)·base(s)`.
    Discounted {
        kernel: DiscountKernel,
        base: TimeField,
    },
    Tabulated(Arc<TwoTimeTable>),
    Custom {
        rows: usize,
        cols: usize,
        value: Arc<TwoTimeFn>,
        dvalue_dt: Arc<TwoTimeFn>,
    },
}

impl fmt::Debug for TwoTimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Running(b) => f.debug_tuple("Running").field(b).finish(),
            Self::Discounted { kernel, base } => f
                .debug_struct("Discounted")
                .field("kernel", kernel)
                .field("base", base)
                .finish(),
            Self::Tabulated(t) => f.debug_tuple("Tabulated").field(t).finish(),
            Self::Custom { rows, cols, .. } => write!(f, "Custom({rows}x{cols})"),
        }
    }
}

impl TwoTimeField {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self::Running(TimeField::Constant(m))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::Running(TimeField::zeros(rows, cols))
    }

    pub fn custom(
        rows: usize,
        cols: usize,
        value: impl Fn(f64, f64, &mut [f64]) + Send + Sync + 'static,
        dvalue_dt: impl Fn(f64, f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self::Custom {
            rows,
            cols,
            value: Arc::new(value),
            dvalue_dt: Arc::new(dvalue_dt),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Running(b) | Self::Discounted { base: b, .. } => b.shape(),
            Self::Tabulated(t) => t.shape(),
            Self::Custom { rows, cols, .. } => (*rows, *cols),
        }
    }

    #[inline]
    pub fn value_into(&self, t: f64, s: f64, out: &mut [f64]) {
        match self {
            Self::Running(b) => b.eval_into(s, out),
            Self::Discounted { kernel, base } => {
                base.eval_into(s, out);
                let w = kernel.lambda(t, s);
                out.iter_mut().for_each(|x| *x *= w);
            }
            Self::Tabulated(tab) => tab.value_into(t, s, out),
            Self::Custom { value, .. } => value(t, s, out),
        }
    }

    #[inline]
    pub fn dt_into(&self, t: f64, s: f64, out: &mut [f64]) {
        match self {
            Self::Running(_) => out.iter_mut().for_each(|x| *x = 0.0),
            Self::Discounted { kernel, base } => {
                base.eval_into(s, out);
                let w = kernel.dlambda_dt(t, s);
                out.iter_mut().for_each(|x| *x *= w);
            }
            Self::Tabulated(tab) => tab.dt_into(t, s, out),
            Self::Custom { dvalue_dt, .. } => dvalue_dt(t, s, out),
        }
    }

    pub fn value(&self, t: f64, s: f64) -> DMatrix<f64> {
        let (r, c) = self.shape();
        let mut m = DMatrix::zeros(r, c);
        self.value_into(t, s, m.as_mut_slice());
        m
    }

    pub fn dvalue_dt(&self, t: f64, s: f64) -> DMatrix<f64> {
        let (r, c) = self.shape();
        let mut m = DMatrix::zeros(r, c);
        self.dt_into(t, s, m.as_mut_slice());
        m
    }

    /// True when the t-derivative vanishes by construction.
    pub fn dt_vanishes(&self) -> bool {
        match self {
            Self::Running(_) => true,
            Self::Discounted { kernel, base } => kernel.is_time_consistent() || base.is_zero(),
            Self::Tabulated(_) | Self::Custom { .. } => false,
        }
    }

    /// Whether the derivative comes from our own finite differencing, in which
    /// case probing it against the values is not informative.
    pub(crate) fn derivative_is_tabulated(&self) -> bool {
        match self {
            Self::Tabulated(_) => true,
            Self::Discounted { kernel, .. } => kernel.is_tabulated(),
            _ => false,
        }
    }

    pub(crate) fn symmetrized(self) -> Self {
        match self {
            Self::Running(b) => Self::Running(b.symmetrized()),
            Self::Discounted { kernel, base } => Self::Discounted {
                kernel,
                base: base.symmetrized(),
            },
            other => other,
        }
    }
}
