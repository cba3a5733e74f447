//! Problem builders shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use tilq_core::io::load_problem;
use tilq_core::nalgebra::{DMatrix, DVector};
use tilq_core::problem::CostFields;
use tilq_core::{
    make_discounted, BaseProblem, Dimensions, DiscountKernel, DynamicsField, ProblemSpec, TerminalField, TimeField,
    TwoTimeField,
};

pub fn problems_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

pub fn load(name: &str) -> ProblemSpec {
    load_problem(&problems_dir().join(name), false).unwrap().spec
}

/// The shipped demo problems with a non-exponential or exponential kernel.
pub const DEMO_FILES: [&str; 5] = [
    "hyperbolic_scalar_k05.json",
    "hyperbolic_scalar_k1.json",
    "hyperbolic_scalar_k2.json",
    "two_state_exponential.json",
    "two_state_hyperbolic.json",
];

pub fn m1(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

pub fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

/// `A=0, B=1, M=1, Q=0, G=1, T=1`: `P(t) = 1/(2−t)`.
pub fn classical_base() -> BaseProblem {
    BaseProblem::scalar(1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0)
}

pub fn classical() -> ProblemSpec {
    classical_base().undiscounted().unwrap()
}

/// Scalar base with every coefficient switched on.
pub fn coupled_base() -> BaseProblem {
    BaseProblem::scalar(1.0, 0.1, 1.0, 0.5, 1.0, 0.2, 1.0, 0.3, 0.1, 1.0, 0.5)
}

pub fn hyperbolic(k: f64) -> ProblemSpec {
    make_discounted(&coupled_base(), &DiscountKernel::Hyperbolic { k }).unwrap()
}

pub fn exponential(delta: f64) -> ProblemSpec {
    make_discounted(&coupled_base(), &DiscountKernel::Exponential { delta }).unwrap()
}

/// Two-state base of the shipped two-state demos, without discounting.
pub fn two_state_base() -> BaseProblem {
    let m = |r: usize, c: usize, v: &[f64]| DMatrix::from_row_slice(r, c, v);
    let k = |x: DMatrix<f64>| TimeField::Constant(x);
    BaseProblem {
        dims: Dimensions { n: 2, m: 2 },
        horizon: 1.0,
        dynamics: DynamicsField {
            a: TimeField::polynomial(vec![m(2, 2, &[0.0, 1.0, -1.0, -0.2]), m(2, 2, &[0.0, 0.0, 0.3, 0.0])]).unwrap(),
            b: k(m(2, 2, &[1.0, 0.0, 0.5, 1.0])),
            bias: k(m(2, 1, &[0.1, 0.0])),
        },
        q: k(m(2, 2, &[1.0, 0.3, 0.3, 0.5])),
        s: k(m(2, 2, &[0.1, 0.0, 0.0, 0.1])),
        m: k(m(2, 2, &[1.0, 0.2, 0.2, 2.0])),
        q_lin: k(m(2, 1, &[0.2, -0.1])),
        rho: k(m(2, 1, &[0.05, 0.0])),
        g: m(2, 2, &[1.0, 0.0, 0.0, 0.5]),
        g_lin: DVector::from_vec(vec![0.2, 0.1]),
    }
}

/// Scalar problem assembled field by field; every weight is independent of
/// the evaluation time unless overridden.
pub struct Scalar {
    pub horizon: f64,
    pub a: f64,
    pub b: f64,
    pub bias: f64,
    pub q: TwoTimeField,
    pub s: TwoTimeField,
    pub m: TwoTimeField,
    pub q_lin: TwoTimeField,
    pub rho: TwoTimeField,
    pub terminal: TerminalField,
}

impl Default for Scalar {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            a: 0.0,
            b: 0.0,
            bias: 0.0,
            q: TwoTimeField::zeros(1, 1),
            s: TwoTimeField::zeros(1, 1),
            m: TwoTimeField::constant(m1(1.0)),
            q_lin: TwoTimeField::zeros(1, 1),
            rho: TwoTimeField::zeros(1, 1),
            terminal: TerminalField::constant(m1(0.0), v1(0.0)),
        }
    }
}

impl Scalar {
    pub fn build(self) -> ProblemSpec {
        ProblemSpec::new(
            Dimensions { n: 1, m: 1 },
            self.horizon,
            DynamicsField {
                a: TimeField::Constant(m1(self.a)),
                b: TimeField::Constant(m1(self.b)),
                bias: TimeField::Constant(m1(self.bias)),
            },
            CostFields {
                q: self.q,
                s: self.s,
                m: self.m,
                q_lin: self.q_lin,
                rho: self.rho,
            },
            self.terminal,
        )
        .unwrap()
    }
}

/// Two-time scalar field `a + c·t`, so its t-derivative is `c`.
pub fn linear_in_t(a: f64, c: f64) -> TwoTimeField {
    TwoTimeField::custom(1, 1, move |t, _s, o| o[0] = a + c * t, move |_t, _s, o| o[0] = c)
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
