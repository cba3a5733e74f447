use std::fmt;

use nalgebra::DMatrix;
use serde::Serialize;

use super::{ProblemSpec, TimeField, TwoTimeField};

/// One violated assumption, with the first location where it was found.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    /// Assumption label, `H0`..`H5`.
    pub assumption: &'static str,
    pub field: &'static str,
    pub t: f64,
    /// Running time for two-time fields.
    pub s: Option<f64>,
    /// Number of sample points exhibiting the same violation.
    pub occurrences: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.assumption, self.message)?;
        if self.occurrences > 1 {
            write!(f, " (and {} more sample points)", self.occurrences - 1)?;
        }
        Ok(())
    }
}

/// Result of [`validate`]; empty means every sampled check passed.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    /// True when some violation message contains `needle`.
    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.to_string().contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Tolerances for [`validate_with`].
#[derive(Clone, Copy, Debug)]
pub struct ValidationOptions {
    pub samples: usize,
    /// Relative asymmetry beyond which Q, M, G are rejected.
    pub symmetry_tol: f64,
    /// Eigenvalue floor for positive semi-definiteness, relative to `max(1, ‖X‖)`.
    pub psd_floor: f64,
    /// Smallest admissible eigenvalue of M relative to its norm.
    pub pd_ratio: f64,
    /// Allowed mismatch between a supplied derivative and a finite difference,
    /// relative to `1 + |value|`.
    pub derivative_tol: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            samples: 100,
            symmetry_tol: 1e-8,
            psd_floor: -1e-10,
            pd_ratio: 1e-12,
            derivative_tol: 1e-6,
        }
    }
}

/// Checks the model assumptions at `samples` evenly spaced times (and all
/// ordered pairs of them for two-time fields). Never fails; the report lists
/// every violated assumption.
pub fn validate(spec: &ProblemSpec, samples: usize) -> ValidationReport {
    validate_with(
        spec,
        &ValidationOptions {
            samples,
            ..Default::default()
        },
    )
}

#[derive(Default)]
struct Collector {
    found: Vec<(String, Violation)>,
}

impl Collector {
    /// Records a violation of `kind`, merging repeats into an occurrence count.
    fn push(
        &mut self,
        kind: String,
        assumption: &'static str,
        field: &'static str,
        t: f64,
        s: Option<f64>,
        detail: impl FnOnce() -> String,
    ) {
        if let Some((_, v)) = self.found.iter_mut().find(|(k, _)| *k == kind) {
            v.occurrences += 1;
            return;
        }
        let message = format!("{kind}{}", detail());
        self.found.push((
            kind,
            Violation {
                assumption,
                field,
                t,
                s,
                occurrences: 1,
                message,
            },
        ));
    }
}

fn location(t: f64, s: Option<f64>) -> String {
    match s {
        Some(s) if s == t => format!(" at (t,t) with t = {t}"),
        Some(s) => format!(" at (t,s) = ({t}, {s})"),
        None => format!(" at t = {t}"),
    }
}

fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn validate_with(spec: &ProblemSpec, opts: &ValidationOptions) -> ValidationReport {
    let mut c = Collector::default();
    let samples = opts.samples.max(2);
    let big_t = spec.horizon;
    let ts: Vec<f64> = (0..samples).map(|i| big_t * i as f64 / (samples - 1) as f64).collect();

    let finite = |c: &mut Collector, a: &'static str, field: &'static str, m: &DMatrix<f64>, t: f64, s: Option<f64>| {
        if m.iter().any(|x| !x.is_finite()) {
            c.push(format!("{field} has non-finite entries"), a, field, t, s, || {
                location(t, s)
            });
        }
    };
    let symmetric =
        |c: &mut Collector, a: &'static str, field: &'static str, m: &DMatrix<f64>, t: f64, s: Option<f64>| {
            let asym = (m - m.transpose()).amax();
            if asym > opts.symmetry_tol * m.amax() {
                c.push(format!("{field} not symmetric"), a, field, t, s, || {
                    format!("{} (asymmetry {asym:e})", location(t, s))
                });
            }
        };
    let psd = |c: &mut Collector, a: &'static str, field: &'static str, m: &DMatrix<f64>, t: f64, s: Option<f64>| {
        if m.iter().any(|x| !x.is_finite()) {
            return;
        }
        let sm = sym_part(m);
        let min = sm.clone().symmetric_eigenvalues().min();
        if min < opts.psd_floor * sm.amax().max(1.0) {
            c.push(format!("{field} not positive semi-definite"), a, field, t, s, || {
                format!("{} (smallest eigenvalue {min:e})", location(t, s))
            });
        }
    };

    let d = &spec.dynamics;
    for &t in &ts {
        finite(&mut c, "H0", "A", &d.a.eval(t), t, None);
        finite(&mut c, "H0", "B", &d.b.eval(t), t, None);
        finite(&mut c, "H0", "b", &d.bias.eval(t), t, None);
    }

    let k = &spec.costs;
    let fields: [(&'static str, &'static str, &TwoTimeField); 5] = [
        ("Q", "H2", &k.q),
        ("S", "H3", &k.s),
        ("M", "H1", &k.m),
        ("q", "H4", &k.q_lin),
        ("rho", "H4", &k.rho),
    ];
    for (i, &t) in ts.iter().enumerate() {
        for &s in &ts[i..] {
            for &(name, a, f) in &fields {
                let v = f.value(t, s);
                finite(&mut c, a, name, &v, t, Some(s));
                finite(&mut c, "H5", name, &f.dvalue_dt(t, s), t, Some(s));
                if name == "Q" {
                    symmetric(&mut c, a, name, &v, t, Some(s));
                    psd(&mut c, a, name, &v, t, Some(s));
                }
                if name == "M" {
                    symmetric(&mut c, a, name, &v, t, Some(s));
                    if !positive_definite(&v, opts.pd_ratio) {
                        c.push("M not positive definite".into(), a, name, t, Some(s), || {
                            location(t, Some(s))
                        });
                    }
                }
                if !f.derivative_is_tabulated() {
                    probe_two_time(&mut c, name, f, t, s, big_t, opts.derivative_tol);
                }
            }
        }
    }

    let term = &spec.terminal;
    for &t in &ts {
        let g = term.g.eval(t);
        finite(&mut c, "H2", "G", &g, t, None);
        finite(&mut c, "H4", "g", &term.g_lin.eval(t), t, None);
        finite(&mut c, "H5", "dG/dt", &term.g_dt.eval(t), t, None);
        finite(&mut c, "H5", "dg/dt", &term.g_lin_dt.eval(t), t, None);
        symmetric(&mut c, "H2", "G", &g, t, None);
        psd(&mut c, "H2", "G", &g, t, None);
        probe_time(&mut c, "G", &term.g, &term.g_dt, t, big_t, opts.derivative_tol);
        probe_time(&mut c, "g", &term.g_lin, &term.g_lin_dt, t, big_t, opts.derivative_tol);
    }

    ValidationReport {
        violations: c.found.into_iter().map(|(_, v)| v).collect(),
    }
}

fn positive_definite(m: &DMatrix<f64>, ratio: f64) -> bool {
    if m.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let sm = sym_part(m);
    if sm.clone().cholesky().is_none() {
        return false;
    }
    let eig = sm.symmetric_eigenvalues();
    let max = eig.amax();
    eig.min() >= ratio * max && max > 0.0
}

/// Stencil for a first derivative at `t` staying inside `[lo, hi]`:
/// central if possible, otherwise second-order one-sided.
fn stencil(t: f64, lo: f64, hi: f64, h: f64) -> Option<[(f64, f64); 3]> {
    if t - h >= lo && t + h <= hi {
        Some([(t - h, -0.5 / h), (t + h, 0.5 / h), (t, 0.0)])
    } else if t + 2.0 * h <= hi {
        Some([(t, -1.5 / h), (t + h, 2.0 / h), (t + 2.0 * h, -0.5 / h)])
    } else if t - 2.0 * h >= lo {
        Some([(t, 1.5 / h), (t - h, -2.0 / h), (t - 2.0 * h, 0.5 / h)])
    } else {
        None
    }
}

fn compare_derivative(
    c: &mut Collector,
    field: &'static str,
    fd: &DMatrix<f64>,
    supplied: &DMatrix<f64>,
    t: f64,
    s: Option<f64>,
    tol: f64,
) {
    let err = (fd - supplied).amax();
    let scale = 1.0 + fd.amax().max(supplied.amax());
    if err > tol * scale {
        c.push(
            format!("derivative of {field} in t inconsistent with its values"),
            "H5",
            field,
            t,
            s,
            || format!("{} (finite difference differs by {err:e})", location(t, s)),
        );
    }
}

fn probe_two_time(c: &mut Collector, field: &'static str, f: &TwoTimeField, t: f64, s: f64, big_t: f64, tol: f64) {
    let h = 1e-5 * big_t;
    let Some(st) = stencil(t, 0.0, s, h) else { return };
    let (r, cc) = f.shape();
    let mut fd = DMatrix::zeros(r, cc);
    for (tt, w) in st {
        if w != 0.0 {
            fd += f.value(tt, s) * w;
        }
    }
    compare_derivative(c, field, &fd, &f.dvalue_dt(t, s), t, Some(s), tol);
}

fn probe_time(c: &mut Collector, field: &'static str, f: &TimeField, df: &TimeField, t: f64, big_t: f64, tol: f64) {
    if matches!(f, TimeField::Tabulated(_)) {
        return;
    }
    let h = 1e-5 * big_t;
    let Some(st) = stencil(t, 0.0, big_t, h) else { return };
    let (r, cc) = f.shape();
    let mut fd = DMatrix::zeros(r, cc);
    for (tt, w) in st {
        if w != 0.0 {
            fd += f.eval(tt) * w;
        }
    }
    compare_derivative(c, field, &fd, &df.eval(t), t, None, tol);
}

#[cfg(test)]
mod tests {
    use super::super::{make_discounted, BaseProblem, DiscountKernel};
    use super::*;

    #[test]
    fn clean_scalar_spec_passes() {
        let base = BaseProblem::scalar(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0);
        assert!(validate(&base.undiscounted().unwrap(), 20).is_empty());
    }

    #[test]
    fn negative_control_weight_is_flagged() {
        let base = BaseProblem::scalar(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0);
        let report = validate(&base.undiscounted().unwrap(), 10);
        assert!(report.mentions("M not positive definite at (t,t)"), "{report}");
        assert!(report.violations.iter().any(|v| v.assumption == "H1"));
    }

    #[test]
    fn wrong_derivative_is_flagged() {
        let base = BaseProblem::scalar(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0);
        let mut spec = base.undiscounted().unwrap();
        spec.costs.q = TwoTimeField::custom(1, 1, |t, s, o| o[0] = (-(s - t)).exp(), |_, _, o| o[0] = 0.0);
        let report = validate(&spec, 10);
        assert!(report.mentions("derivative of Q in t inconsistent"), "{report}");
    }

    #[test]
    fn discounted_analytic_families_pass() {
        let base = BaseProblem::scalar(1.0, 0.1, 1.0, 0.5, 1.0, 0.2, 1.0, 0.3, 0.1, 1.0, 0.5);
        for k in [
            DiscountKernel::Exponential { delta: 0.7 },
            DiscountKernel::Hyperbolic { k: 2.0 },
            DiscountKernel::QuasiHyperbolic {
                beta: 0.7,
                delta: 0.2,
                width: 0.1,
            },
        ] {
            let report = validate(&make_discounted(&base, &k).unwrap(), 30);
            assert!(report.is_empty(), "{k:?}: {report}");
        }
    }
}
