mod common;

use common::{classical, m1, v1, Scalar};
use tilq_core::grid::closed_loop_transition;
use tilq_core::nalgebra::DMatrix;
use tilq_core::riccati::{classical_riccati, gamma_from_p, qbb_from_gamma, riccati_sweep, riccati_sweep_with};
use tilq_core::{
    make_discounted, solve_equilibrium_riccati, BaseProblem, DiscountKernel, Execution, InitialGuess, MatrixSeries,
    SolveOptions, SweepForm, TerminalField, TimeField, TimeGrid, TwoTimeField,
};

fn exact_classical(t: f64) -> f64 {
    1.0 / (2.0 - t)
}

#[test]
fn gain_examples() {
    let spec = Scalar {
        b: 1.0,
        m: TwoTimeField::constant(m1(2.0)),
        s: TwoTimeField::constant(m1(1.0)),
        ..Default::default()
    }
    .build();
    assert!((gamma_from_p(&m1(3.0), &spec, 0.3).unwrap()[(0, 0)] - 2.0).abs() < 1e-15);

    let spec = Scalar::default().build();
    assert_eq!(gamma_from_p(&m1(3.0), &spec, 0.0).unwrap(), m1(0.0));

    let mut base = common::two_state_base();
    base.dynamics.b = TimeField::Constant(DMatrix::identity(2, 2));
    base.m = TimeField::Constant(DMatrix::identity(2, 2));
    base.s = TimeField::zeros(2, 2);
    let spec = base.undiscounted().unwrap();
    let p = DMatrix::from_diagonal(&tilq_core::nalgebra::DVector::from_vec(vec![1.0, 2.0]));
    assert_eq!(gamma_from_p(&p, &spec, 0.5).unwrap(), p);

    let bad = Scalar {
        m: TwoTimeField::constant(m1(-1.0)),
        ..Default::default()
    }
    .build();
    assert!(matches!(
        gamma_from_p(&m1(1.0), &bad, 0.0),
        Err(tilq_core::Error::NotPositiveDefinite { .. })
    ));
}

#[test]
fn integral_term_vanishes_when_time_consistent() {
    let g = TimeGrid::new(1.0, 200).unwrap();
    let r = solve_equilibrium_riccati(&classical(), &g, &SolveOptions::default()).unwrap();
    assert!((0..g.len()).all(|i| r.qbb.slice(i)[0] == 0.0));
}

#[test]
fn integral_term_terminal_only() {
    // G(t) = 2 − t, so Ġ ≡ −1; E ≡ 1 with zero drift and zero gain.
    let g_field = TimeField::polynomial(vec![m1(2.0), m1(-1.0)]).unwrap();
    let spec = Scalar {
        terminal: TerminalField::from_values(g_field, TimeField::zeros(1, 1)).unwrap(),
        ..Default::default()
    }
    .build();
    let g = TimeGrid::new(1.0, 50).unwrap();
    let gamma = MatrixSeries::zeros(g.len(), 1, 1);
    let closed = closed_loop_transition(&spec.dynamics, &gamma, &g).unwrap();
    let q0 = qbb_from_gamma(&gamma, &closed, &spec, &g, 0).unwrap();
    assert!((q0[(0, 0)] + 1.0).abs() < 1e-14);
}

/// Independent evaluation of `ℚ(0)` for a scalar problem: closed-form
/// transition `exp(∫(a − bΓ))` with Γ linear between nodes, trapezoid rule on a
/// grid ten times finer.
fn fine_qbb0(spec: &tilq_core::ProblemSpec, gamma: &MatrixSeries, coarse: &TimeGrid) -> f64 {
    let a = spec.dynamics.a.eval(0.0)[(0, 0)];
    let b = spec.dynamics.b.eval(0.0)[(0, 0)];
    let fine = TimeGrid::new(coarse.horizon(), coarse.intervals() * 10).unwrap();
    let gam = |s: f64| {
        let (i, al) = coarse.locate(s).unwrap();
        gamma.lerp(i, al)[(0, 0)]
    };
    let mut exponent = 0.0;
    let mut integrand = Vec::with_capacity(fine.len());
    for k in 0..fine.len() {
        let s = fine.node(k);
        if k > 0 {
            let sp = fine.node(k - 1);
            exponent += 0.5 * fine.step() * ((a - b * gam(sp)) + (a - b * gam(s)));
        }
        let e = exponent.exp();
        let c = &spec.costs;
        let gs = gam(s);
        let d = c.q.dvalue_dt(0.0, s)[(0, 0)] - 2.0 * gs * c.s.dvalue_dt(0.0, s)[(0, 0)]
            + gs * gs * c.m.dvalue_dt(0.0, s)[(0, 0)];
        integrand.push(e * e * d);
    }
    let e_t = exponent.exp();
    e_t * e_t * spec.terminal.g_dt.eval(0.0)[(0, 0)] + fine.quadrature(&integrand).unwrap()
}

#[test]
fn integral_term_matches_fine_quadrature() {
    let spec = common::exponential(0.5);
    let g = TimeGrid::new(1.0, 1000).unwrap();
    let r = solve_equilibrium_riccati(&spec, &g, &SolveOptions::default()).unwrap();
    let got = qbb_from_gamma(&r.gamma, &r.closed_loop, &spec, &g, 0).unwrap()[(0, 0)];
    assert_eq!(got, r.qbb.slice(0)[0]);
    let oracle = fine_qbb0(&spec, &r.gamma, &g);
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
}

#[test]
fn sweep_of_trivial_problem_returns_terminal_weight() {
    let spec = Scalar {
        terminal: TerminalField::constant(m1(1.7), v1(0.0)),
        ..Default::default()
    }
    .build();
    let g = TimeGrid::new(1.0, 20).unwrap();
    let p_in = MatrixSeries::from_fn(g.len(), 1, 1, |i, o| o[0] = (i as f64).sin() * 5.0);
    let out = riccati_sweep(&p_in, &spec, &g).unwrap();
    assert!((0..g.len()).all(|i| (out.slice(i)[0] - 1.7).abs() < 1e-15));
}

#[test]
fn sweep_reproduces_exact_classical_solution() {
    let g = TimeGrid::new(1.0, 400).unwrap();
    let h = g.step();
    let exact = MatrixSeries::from_fn(g.len(), 1, 1, |i, o| o[0] = exact_classical(g.node(i)));
    for form in [SweepForm::OpenLoop, SweepForm::ClosedLoop] {
        let out = riccati_sweep_with(&exact, &classical(), &g, form, Execution::Sequential).unwrap();
        assert!(
            out.sup_distance(&exact) <= 10.0 * h * h,
            "{form:?}: {}",
            out.sup_distance(&exact)
        );
    }
}

#[test]
fn sweep_at_fixed_point_is_stationary() {
    let spec = common::hyperbolic(1.0);
    let g = TimeGrid::new(1.0, 400).unwrap();
    let h = g.step();
    let r = solve_equilibrium_riccati(&spec, &g, &SolveOptions::default()).unwrap();
    let out = riccati_sweep(&r.p, &spec, &g).unwrap();
    assert!(out.sup_distance(&r.p) <= 10.0 * h * h);
}

#[test]
fn classical_case_matches_closed_form() {
    let g = TimeGrid::new(1.0, 2000).unwrap();
    let r = solve_equilibrium_riccati(&classical(), &g, &SolveOptions::default()).unwrap();
    assert!(r.diagnostics.iteration.converged);
    let err = (0..g.len())
        .map(|i| (r.p.slice(i)[0] - exact_classical(g.node(i))).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-4, "max error {err}");
    assert!((r.p.slice(0)[0] - 0.5).abs() <= 1e-4);
}

#[test]
fn zero_cost_gives_zero_solution() {
    let spec = Scalar {
        a: 0.4,
        b: 1.0,
        m: TwoTimeField::constant(m1(3.0)),
        ..Default::default()
    }
    .build();
    let g = TimeGrid::new(1.0, 100).unwrap();
    let r = solve_equilibrium_riccati(&spec, &g, &SolveOptions::default()).unwrap();
    assert_eq!(r.p.sup_norm(), 0.0);
    assert_eq!(classical_riccati(&spec, &g).unwrap().sup_norm(), 0.0);
}

#[test]
fn hyperbolic_second_order_self_convergence() {
    let spec = common::hyperbolic(1.0);
    let solve = |n: usize| {
        let g = TimeGrid::new(1.0, n).unwrap();
        solve_equilibrium_riccati(&spec, &g, &SolveOptions::default())
            .unwrap()
            .p
    };
    let (p1, p2, p4) = (solve(250), solve(500), solve(1000));
    let d12 = (0..p1.len())
        .map(|i| (p1.slice(i)[0] - p2.slice(2 * i)[0]).abs())
        .fold(0.0, f64::max);
    let d24 = (0..p2.len())
        .map(|i| (p2.slice(i)[0] - p4.slice(2 * i)[0]).abs())
        .fold(0.0, f64::max);
    assert!(d12 <= 4.0 * d24, "successive differences {d12:e}, {d24:e}");
}

#[test]
fn classical_riccati_examples() {
    let g = TimeGrid::new(1.0, 2000).unwrap();
    let p = classical_riccati(&classical(), &g).unwrap();
    assert!((p.slice(0)[0] - 0.5).abs() < 1e-8);

    let spec = Scalar {
        q: TwoTimeField::constant(m1(1.0)),
        ..Default::default()
    }
    .build();
    let g = TimeGrid::new(1.0, 10).unwrap();
    let p = classical_riccati(&spec, &g).unwrap();
    for i in 0..g.len() {
        assert!((p.slice(i)[0] - (1.0 - g.node(i))).abs() < 1e-14);
    }

    assert!(matches!(
        classical_riccati(&common::hyperbolic(1.0), &g),
        Err(tilq_core::Error::NotTimeConsistent(_))
    ));
}

/// With `λ = e^{−δ(s−t)}` the equilibrium solves the classical equation with
/// drift `A − δ/2·I`, and `ℚ = δP`.
#[test]
fn exponential_discount_reduces_to_shifted_drift() {
    let delta = 0.5;
    let g = TimeGrid::new(1.0, 1000).unwrap();
    let h = g.step();
    let r = solve_equilibrium_riccati(&common::exponential(delta), &g, &SolveOptions::default()).unwrap();
    let mut shifted = common::coupled_base();
    shifted.dynamics.a = TimeField::Constant(m1(0.1 - 0.5 * delta));
    let oracle = classical_riccati(&shifted.undiscounted().unwrap(), &g).unwrap();
    let scale = r.p.sup_norm().max(1.0);
    assert!(r.p.sup_distance(&oracle) <= 10.0 * h * h * scale);
    let qbb_err = (0..g.len())
        .map(|i| (r.qbb.slice(i)[0] - delta * r.p.slice(i)[0]).abs())
        .fold(0.0, f64::max);
    assert!(qbb_err <= 10.0 * h * h * scale, "{qbb_err:e}");
}

#[test]
fn two_state_time_consistent_reduction() {
    let spec = common::two_state_base().undiscounted().unwrap();
    for n in [200, 400] {
        let g = TimeGrid::new(1.0, n).unwrap();
        let h = g.step();
        let r = solve_equilibrium_riccati(&spec, &g, &SolveOptions::default()).unwrap();
        let c = classical_riccati(&spec, &g).unwrap();
        assert!(r.p.sup_distance(&c) <= 10.0 * h * h * r.p.sup_norm().max(1.0));
    }
}

#[test]
fn solution_invariants() {
    let spec = make_discounted(&common::two_state_base(), &DiscountKernel::Hyperbolic { k: 1.0 }).unwrap();
    let g = TimeGrid::new(1.0, 300).unwrap();
    let r = solve_equilibrium_riccati(&spec, &g, &SolveOptions::default()).unwrap();
    let last = g.intervals();
    assert_eq!(r.p.matrix(last), spec.terminal.g.eval(1.0));
    for i in 0..g.len() {
        let p = r.p.matrix(i);
        assert_eq!(p, p.transpose());
        let q = r.qbb.matrix(i);
        assert_eq!(q, q.transpose());
        assert_eq!(r.gamma.matrix(i), gamma_from_p(&p, &spec, g.node(i)).unwrap());
    }
    let d = &r.diagnostics.iteration;
    assert!(d.converged && d.last_delta() <= 1e-10);
    assert!(r.diagnostics.max_asymmetry <= 1e-8);
}

#[test]
fn nonnegative_without_cross_terms() {
    let base = BaseProblem::scalar(1.0, 0.3, 1.0, 0.0, 1.0, 0.0, 0.5, 0.0, 0.0, 2.0, 0.0);
    let spec = make_discounted(&base, &DiscountKernel::Hyperbolic { k: 2.0 }).unwrap();
    let g = TimeGrid::new(1.0, 200).unwrap();
    let r = solve_equilibrium_riccati(&spec, &g, &SolveOptions::default()).unwrap();
    assert!(r.diagnostics.warnings.is_empty(), "{:?}", r.diagnostics.warnings);
    assert!((0..g.len()).all(|i| r.p.slice(i)[0] >= -1e-8));
}

#[test]
fn initial_guesses_agree() {
    let spec = common::hyperbolic(2.0);
    let g = TimeGrid::new(1.0, 300).unwrap();
    let tol = SolveOptions::default().tolerance;
    let run = |initial: InitialGuess, sweep: SweepForm| {
        let opts = SolveOptions {
            initial,
            sweep,
            ..Default::default()
        };
        solve_equilibrium_riccati(&spec, &g, &opts).unwrap().p
    };
    // Each sweep form has its own discrete fixed point; they differ at O(h²).
    for form in [SweepForm::ClosedLoop, SweepForm::OpenLoop] {
        let reference = run(InitialGuess::Terminal, form);
        for init in [InitialGuess::Zero, InitialGuess::ScaledTerminal(5.0)] {
            let p = run(init.clone(), form);
            assert!(
                p.sup_distance(&reference) <= 10.0 * tol,
                "{init:?} {form:?}: {:e}",
                p.sup_distance(&reference)
            );
        }
    }
    let h = g.step();
    let closed = run(InitialGuess::Terminal, SweepForm::ClosedLoop);
    let open = run(InitialGuess::Terminal, SweepForm::OpenLoop);
    assert!(closed.sup_distance(&open) <= 10.0 * h * h);
}

#[test]
fn sequential_and_parallel_agree_bitwise() {
    let spec = common::hyperbolic(1.0);
    let g = TimeGrid::new(1.0, 300).unwrap();
    let run = |execution| {
        let opts = SolveOptions {
            execution,
            ..Default::default()
        };
        solve_equilibrium_riccati(&spec, &g, &opts).unwrap()
    };
    let (a, b) = (run(Execution::Parallel), run(Execution::Sequential));
    assert_eq!(a.p, b.p);
    assert_eq!(a.qbb, b.qbb);
}

#[test]
fn non_convergence_is_reported() {
    let spec = common::hyperbolic(1.0);
    let g = TimeGrid::new(1.0, 100).unwrap();
    let opts = SolveOptions {
        max_iterations: 1,
        initial: InitialGuess::Zero,
        ..Default::default()
    };
    match solve_equilibrium_riccati(&spec, &g, &opts) {
        Err(tilq_core::Error::NoConvergence { diagnostics, .. }) => {
            assert_eq!(diagnostics.iterations, 1);
            assert!(!diagnostics.converged);
        }
        other => panic!("expected NoConvergence, got {other:?}"),
    }
}
