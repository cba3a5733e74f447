//! JSON problem-file schema.
//!
//! Matrices are arrays of rows. A flat array is a column vector (or a row
//! when the expected shape is `1×k`), and a bare number is a `1×1` matrix.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iteration::{InitialGuess, SolveOptions, SweepForm};
use crate::par::Execution;
use crate::problem::{
    finite_diff_t, make_discounted, BaseProblem, CostFields, Dimensions, DiscountKernel, DynamicsField, ProblemSpec,
    TabulatedValues, TerminalField, TimeField, TimeTable, TwoTimeField,
};
use crate::verification::VerifyOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixJson {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        if m.nrows() == 1 && m.ncols() == 1 {
            Self::Scalar(m[(0, 0)])
        } else if m.ncols() == 1 {
            Self::Vector(m.iter().copied().collect())
        } else {
            Self::Matrix(m.row_iter().map(|r| r.iter().copied().collect()).collect())
        }
    }

    pub fn to_matrix(&self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
        let bad = |got: String| {
            Err(Error::ProblemFile(format!(
                "{what}: expected a {rows}×{cols} matrix, got {got}"
            )))
        };
        match self {
            Self::Scalar(x) if rows == 1 && cols == 1 => Ok(DMatrix::from_element(1, 1, *x)),
            Self::Scalar(_) => bad("a number".into()),
            Self::Vector(v) if cols == 1 && v.len() == rows => Ok(DMatrix::from_column_slice(rows, 1, v)),
            Self::Vector(v) if rows == 1 && v.len() == cols => Ok(DMatrix::from_row_slice(1, cols, v)),
            Self::Vector(v) => bad(format!("a flat array of length {}", v.len())),
            Self::Matrix(r) => {
                if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                    let widths: Vec<usize> = r.iter().map(Vec::len).collect();
                    return bad(format!("{} rows of widths {widths:?}", r.len()));
                }
                Ok(DMatrix::from_fn(rows, cols, |i, j| r[i][j]))
            }
        }
    }
}

/// One-time field: a constant, `{"polynomial": [c0, c1, …]}` or
/// `{"tabulated": {"times": […], "values": […]}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeFieldJson {
    Constant(MatrixJson),
    Form(TimeFieldForm),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeFieldForm {
    Polynomial(Vec<MatrixJson>),
    Tabulated { times: Vec<f64>, values: Vec<MatrixJson> },
}

impl TimeFieldJson {
    pub fn build(&self, rows: usize, cols: usize, what: &str) -> Result<TimeField> {
        match self {
            Self::Constant(m) => Ok(TimeField::Constant(m.to_matrix(rows, cols, what)?)),
            Self::Form(TimeFieldForm::Polynomial(cs)) => {
                let mats = cs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c.to_matrix(rows, cols, &format!("{what} coefficient {k}")))
                    .collect::<Result<Vec<_>>>()?;
                TimeField::polynomial(mats)
            }
            Self::Form(TimeFieldForm::Tabulated { times, values }) => {
                let mats = values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v.to_matrix(rows, cols, &format!("{what} sample {k}")))
                    .collect::<Result<Vec<_>>>()?;
                Ok(TimeField::Tabulated(Arc::new(TimeTable::new(times.clone(), &mats)?)))
            }
        }
    }
}

/// Two-time field: a constant, `{"running": <one-time field of s>}` or
/// `{"tabulated": {"times": […], "values": [[…], …]}}` where `values[i]`
/// lists the entries at `(t_i, t_j)` for `j ≥ i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TwoTimeFieldJson {
    Constant(MatrixJson),
    Form(TwoTimeForm),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TwoTimeForm {
    Running(TimeFieldJson),
    Tabulated {
        times: Vec<f64>,
        values: Vec<Vec<MatrixJson>>,
    },
}

fn column_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

impl TwoTimeFieldJson {
    pub fn build(&self, rows: usize, cols: usize, what: &str) -> Result<TwoTimeField> {
        match self {
            Self::Constant(m) => Ok(TwoTimeField::constant(m.to_matrix(rows, cols, what)?)),
            Self::Form(TwoTimeForm::Running(f)) => Ok(TwoTimeField::Running(f.build(rows, cols, what)?)),
            Self::Form(TwoTimeForm::Tabulated { times, values }) => {
                let rows_by_t = values
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        row.iter()
                            .enumerate()
                            .map(|(k, v)| {
                                Ok(column_major(&v.to_matrix(
                                    rows,
                                    cols,
                                    &format!("{what} entry ({i}, {})", i + k),
                                )?))
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let table = TabulatedValues::from_rows(times, rows, cols, &rows_by_t)?;
                Ok(TwoTimeField::Tabulated(Arc::new(finite_diff_t(&table)?)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsJson {
    pub n: usize,
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsJson {
    pub a: TimeFieldJson,
    pub b: TimeFieldJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<TimeFieldJson>,
}

/// Base coefficients `Q̂(s), Ŝ(s), M̂(s), q̂(s), ρ̂(s)` and terminal `Ĝ, ĝ`,
/// combined with `discount` into `λ(t,s)·base(s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseCostsJson {
    pub q: TimeFieldJson,
    pub m: TimeFieldJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<TimeFieldJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_lin: Option<TimeFieldJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<TimeFieldJson>,
    pub g: MatrixJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_lin: Option<MatrixJson>,
}

/// Explicit two-time kernels and terminal weights of `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoTimeCostsJson {
    pub q: TwoTimeFieldJson,
    pub m: TwoTimeFieldJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<TwoTimeFieldJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_lin: Option<TwoTimeFieldJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<TwoTimeFieldJson>,
    pub g: TimeFieldJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_lin: Option<TimeFieldJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CostsJson {
    Base(BaseCostsJson),
    TwoTime(TwoTimeCostsJson),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscountJson {
    Exponential {
        delta: f64,
    },
    Hyperbolic {
        k: f64,
    },
    QuasiHyperbolic {
        beta: f64,
        delta: f64,
        width: f64,
    },
    /// Scalar `λ(t_i, t_j)` for `j ≥ i` on a uniform grid.
    Tabulated {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl DiscountJson {
    pub fn kernel(&self) -> Result<DiscountKernel> {
        let k = match self {
            Self::Exponential { delta } => DiscountKernel::Exponential { delta: *delta },
            Self::Hyperbolic { k } => DiscountKernel::Hyperbolic { k: *k },
            Self::QuasiHyperbolic { beta, delta, width } => DiscountKernel::QuasiHyperbolic {
                beta: *beta,
                delta: *delta,
                width: *width,
            },
            Self::Tabulated { times, values } => {
                let rows: Vec<Vec<Vec<f64>>> = values.iter().map(|r| r.iter().map(|&v| vec![v]).collect()).collect();
                let table = TabulatedValues::from_rows(times, 1, 1, &rows)?;
                DiscountKernel::Tabulated(Arc::new(finite_diff_t(&table)?))
            }
        };
        k.validate()?;
        Ok(k)
    }

    /// Names of the scalar parameters, the first being the sweep default.
    pub fn parameters(&self) -> &'static [&'static str] {
        match self {
            Self::Exponential { .. } => &["delta"],
            Self::Hyperbolic { .. } => &["k"],
            Self::QuasiHyperbolic { .. } => &["beta", "delta", "width"],
            Self::Tabulated { .. } => &[],
        }
    }

    /// Copy with one scalar parameter replaced.
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self> {
        let mut out = self.clone();
        let slot = match (&mut out, name) {
            (Self::Exponential { delta }, "delta") => delta,
            (Self::Hyperbolic { k }, "k") => k,
            (Self::QuasiHyperbolic { beta, .. }, "beta") => beta,
            (Self::QuasiHyperbolic { delta, .. }, "delta") => delta,
            (Self::QuasiHyperbolic { width, .. }, "width") => width,
            _ => {
                return Err(Error::ProblemFile(format!(
                    "discount family has no sweepable parameter `{name}` (available: {:?})",
                    self.parameters()
                )))
            }
        };
        *slot = value;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialJson {
    Terminal,
    Zero,
    ScaledTerminal(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverJson {
    pub intervals: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub damping: f64,
    pub initial: InitialJson,
    pub sweep: SweepForm,
    pub execution: Execution,
}

pub const DEFAULT_INTERVALS: usize = 1000;

impl Default for SolverJson {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self {
            intervals: DEFAULT_INTERVALS,
            tolerance: d.tolerance,
            max_iterations: d.max_iterations,
            damping: d.damping,
            initial: InitialJson::Terminal,
            sweep: d.sweep,
            execution: d.execution,
        }
    }
}

impl SolverJson {
    pub fn options(&self) -> Result<SolveOptions> {
        let o = SolveOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            damping: self.damping,
            initial: match self.initial {
                InitialJson::Terminal => InitialGuess::Terminal,
                InitialJson::Zero => InitialGuess::Zero,
                InitialJson::ScaledTerminal(c) => InitialGuess::ScaledTerminal(c),
            },
            sweep: self.sweep,
            execution: self.execution,
            ..SolveOptions::default()
        };
        o.validate()?;
        Ok(o)
    }
}

/// Parameter list for the `sweep` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<String>,
    pub values: Vec<f64>,
}

/// A complete problem file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub dims: DimsJson,
    pub horizon: f64,
    pub dynamics: DynamicsJson,
    pub costs: CostsJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<DiscountJson>,
    #[serde(default)]
    pub solver: SolverJson,
    #[serde(default)]
    pub verification: VerifyOptions,
    /// State used for trajectories and `V(0, x₀)`; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepJson>,
}

fn optional(f: &Option<TimeFieldJson>, rows: usize, cols: usize, what: &str) -> Result<TimeField> {
    f.as_ref()
        .map_or(Ok(TimeField::zeros(rows, cols)), |f| f.build(rows, cols, what))
}

fn optional2(f: &Option<TwoTimeFieldJson>, rows: usize, cols: usize, what: &str) -> Result<TwoTimeField> {
    f.as_ref()
        .map_or(Ok(TwoTimeField::zeros(rows, cols)), |f| f.build(rows, cols, what))
}

impl ProblemFile {
    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or("problem")
    }

    pub fn dimensions(&self) -> Result<Dimensions> {
        Dimensions::new(self.dims.n, self.dims.m)
    }

    fn dynamics_field(&self) -> Result<DynamicsField> {
        let (n, m) = (self.dims.n, self.dims.m);
        Ok(DynamicsField {
            a: self.dynamics.a.build(n, n, "dynamics.a")?,
            b: self.dynamics.b.build(n, m, "dynamics.b")?,
            bias: optional(&self.dynamics.bias, n, 1, "dynamics.bias")?,
        })
    }

    /// Base problem for `costs.base` files.
    pub fn base_problem(&self) -> Result<Option<BaseProblem>> {
        let CostsJson::Base(c) = &self.costs else {
            return Ok(None);
        };
        let dims = self.dimensions()?;
        let (n, m) = (dims.n, dims.m);
        Ok(Some(BaseProblem {
            dims,
            horizon: self.horizon,
            dynamics: self.dynamics_field()?,
            q: c.q.build(n, n, "costs.base.q")?,
            s: optional(&c.s, m, n, "costs.base.s")?,
            m: c.m.build(m, m, "costs.base.m")?,
            q_lin: optional(&c.q_lin, n, 1, "costs.base.q_lin")?,
            rho: optional(&c.rho, m, 1, "costs.base.rho")?,
            g: c.g.to_matrix(n, n, "costs.base.g")?,
            g_lin: match &c.g_lin {
                Some(v) => DVector::from_column_slice(v.to_matrix(n, 1, "costs.base.g_lin")?.as_slice()),
                None => DVector::zeros(n),
            },
        }))
    }

    /// Builds the problem with the file's discount, or `kernel` when given.
    pub fn build_spec_with(&self, kernel: Option<&DiscountKernel>) -> Result<ProblemSpec> {
        let dims = self.dimensions()?;
        let (n, m) = (dims.n, dims.m);
        let spec = match &self.costs {
            CostsJson::Base(_) => {
                let base = self.base_problem()?.expect("base costs");
                let own = self.discount.as_ref().map(DiscountJson::kernel).transpose()?;
                match kernel.or(own.as_ref()) {
                    Some(k) => make_discounted(&base, k)?,
                    None => base.undiscounted()?,
                }
            }
            CostsJson::TwoTime(c) => {
                if self.discount.is_some() || kernel.is_some() {
                    return Err(Error::ProblemFile(
                        "`discount` applies to `costs.base`; explicit two-time costs already include it".into(),
                    ));
                }
                let g = c.g.build(n, n, "costs.two_time.g")?;
                let g_lin = optional(&c.g_lin, n, 1, "costs.two_time.g_lin")?;
                ProblemSpec::new(
                    dims,
                    self.horizon,
                    self.dynamics_field()?,
                    CostFields {
                        q: c.q.build(n, n, "costs.two_time.q")?,
                        s: optional2(&c.s, m, n, "costs.two_time.s")?,
                        m: c.m.build(m, m, "costs.two_time.m")?,
                        q_lin: optional2(&c.q_lin, n, 1, "costs.two_time.q_lin")?,
                        rho: optional2(&c.rho, m, 1, "costs.two_time.rho")?,
                    },
                    TerminalField::from_values(g, g_lin)?,
                )?
            }
        };
        Ok(spec.with_name(self.display_name(), self.description.clone()))
    }

    pub fn build_spec(&self) -> Result<ProblemSpec> {
        self.build_spec_with(None)
    }

    /// Same problem with every kernel frozen at its diagonal: `Q(t,s) → Q(s,s)`
    /// and so on, `G(t) → G(T)`. Time-consistent by construction.
    pub fn time_consistent_projection(&self) -> Result<ProblemSpec> {
        let spec = self.build_spec()?;
        Ok(project_time_consistent(&spec)?
            .with_name(format!("{} (diagonal)", self.display_name()), self.description.clone()))
    }

    pub fn initial_state(&self) -> Result<DVector<f64>> {
        match &self.initial_state {
            None => Ok(DVector::zeros(self.dims.n)),
            Some(v) if v.len() == self.dims.n => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(Error::ProblemFile(format!(
                "initial_state has length {}, expected {}",
                v.len(),
                self.dims.n
            ))),
        }
    }
}

/// `X(t,s) → X(s,s)`, `G(t) → G(T)`, `g(t) → g(T)`.
pub fn project_time_consistent(spec: &ProblemSpec) -> Result<ProblemSpec> {
    let diag = |f: &TwoTimeField| {
        let (r, c) = f.shape();
        let f = f.clone();
        TwoTimeField::Running(TimeField::custom(r, c, move |s, out| f.value_into(s, s, out)))
    };
    let t_end = spec.horizon;
    let c = &spec.costs;
    ProblemSpec::new(
        spec.dims,
        spec.horizon,
        spec.dynamics.clone(),
        CostFields {
            q: diag(&c.q),
            s: diag(&c.s),
            m: diag(&c.m),
            q_lin: diag(&c.q_lin),
            rho: diag(&c.rho),
        },
        TerminalField::constant(
            spec.terminal.g.eval(t_end),
            DVector::from_column_slice(spec.terminal.g_lin.eval(t_end).as_slice()),
        ),
    )
}
