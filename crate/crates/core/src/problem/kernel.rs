use std::sync::Arc;

use crate::error::{Error, Result};

use super::table::TwoTimeTable;

/// Discount weight `λ(t,s)` applied at evaluation time `t` to costs incurred
/// at time `s ≥ t`, with its first-argument derivative.
#[derive(Clone, Debug, PartialEq)]
pub enum DiscountKernel {
    /// `λ = e^{−δ(s−t)}`.
    Exponential { delta: f64 },
    /// `λ = 1 / (1 + k(s−t))`.
    Hyperbolic { k: f64 },
    /// Smoothed present bias: `λ = e^{−δτ} (β + (1−β) e^{−τ/w})`, `τ = s−t`.
    /// Short delays are weighted like an exponential discounter, delays well
    /// beyond `w` carry the extra factor `β`.
    QuasiHyperbolic { beta: f64, delta: f64, width: f64 },
    /// Scalar two-time table with finite-difference derivative.
    Tabulated(Arc<TwoTimeTable>),
}

impl DiscountKernel {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidKernel(msg));
        match *self {
            Self::Exponential { delta } if !(delta >= 0.0 && delta.is_finite()) => {
                bad(format!("exponential rate δ must be finite and ≥ 0, got {delta}"))
            }
            Self::Hyperbolic { k } if !(k >= 0.0 && k.is_finite()) => {
                bad(format!("hyperbolic rate k must be finite and ≥ 0, got {k}"))
            }
            Self::QuasiHyperbolic { beta, delta, width } => {
                if !(beta > 0.0 && beta <= 1.0) {
                    bad(format!("present-bias factor β must lie in (0, 1], got {beta}"))
                } else if !(delta >= 0.0 && delta.is_finite()) {
                    bad(format!("quasi-hyperbolic rate δ must be finite and ≥ 0, got {delta}"))
                } else if !(width > 0.0 && width.is_finite()) {
                    bad(format!("smoothing width must be finite and > 0, got {width}"))
                } else {
                    Ok(())
                }
            }
            Self::Tabulated(ref table) => {
                if table.shape() != (1, 1) {
                    return bad("tabulated discount must be scalar".into());
                }
                let v = table.values();
                for i in 0..v.points() {
                    if (v.entry(i, i)[0] - 1.0).abs() > 1e-12 {
                        return bad(format!("tabulated λ(t,t) must equal 1 (row {i})"));
                    }
                    for j in i..v.points() {
                        let x = v.entry(i, j)[0];
                        if !(x > 0.0 && x.is_finite()) {
                            return bad(format!("tabulated λ must be positive and finite at ({i}, {j})"));
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn lambda(&self, t: f64, s: f64) -> f64 {
        let tau = s - t;
        match *self {
            Self::Exponential { delta } => (-delta * tau).exp(),
            Self::Hyperbolic { k } => 1.0 / (1.0 + k * tau),
            Self::QuasiHyperbolic { beta, delta, width } => {
                (-delta * tau).exp() * (beta + (1.0 - beta) * (-tau / width).exp())
            }
            Self::Tabulated(ref table) => {
                let mut o = [0.0];
                table.value_into(t, s, &mut o);
                o[0]
            }
        }
    }

    pub fn dlambda_dt(&self, t: f64, s: f64) -> f64 {
        let tau = s - t;
        match *self {
            Self::Exponential { delta } => delta * (-delta * tau).exp(),
            Self::Hyperbolic { k } => {
                let d = 1.0 + k * tau;
                k / (d * d)
            }
            Self::QuasiHyperbolic { beta, delta, width } => {
                let e = (-delta * tau).exp();
                let f = (-tau / width).exp();
                delta * e * (beta + (1.0 - beta) * f) + e * (1.0 - beta) * f / width
            }
            Self::Tabulated(ref table) => {
                let mut o = [0.0];
                table.dt_into(t, s, &mut o);
                o[0]
            }
        }
    }

    /// True when `dλ/dt ≡ 0`, so discounted fields are time-consistent.
    pub fn is_time_consistent(&self) -> bool {
        match *self {
            Self::Exponential { delta } | Self::QuasiHyperbolic { beta: 1.0, delta, .. } => delta == 0.0,
            Self::Hyperbolic { k } => k == 0.0,
            _ => false,
        }
    }

    pub fn is_tabulated(&self) -> bool {
        matches!(self, Self::Tabulated(_))
    }
}
