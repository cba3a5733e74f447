mod common;

use std::sync::OnceLock;

use common::v1;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tilq_core::grid::open_loop_transition;
use tilq_core::nalgebra::{DMatrix, DVector};
use tilq_core::problem::{finite_diff_t, TabulatedValues};
use tilq_core::verification::{bellman_residual, random_candidate, spike_limit_analytic};
use tilq_core::{
    make_discounted, solve_equilibrium_riccati, validate, BaseProblem, DiscountKernel, DynamicsField,
    EquilibriumSolution, SolveOptions, TimeField, TimeGrid,
};

fn kernel() -> impl Strategy<Value = DiscountKernel> {
    prop_oneof![
        (0.0..3.0f64).prop_map(|delta| DiscountKernel::Exponential { delta }),
        (0.0..4.0f64).prop_map(|k| DiscountKernel::Hyperbolic { k }),
        (0.2..=1.0f64, 0.0..1.0f64, 0.05..1.0f64).prop_map(|(beta, delta, width)| DiscountKernel::QuasiHyperbolic {
            beta,
            delta,
            width
        }),
    ]
}

/// Scalar base with `Q − S²/M ≥ 0`.
fn scalar_base() -> impl Strategy<Value = BaseProblem> {
    (
        0.5..2.0f64,
        -1.0..1.0f64,
        0.3..2.0f64,
        -0.5..0.5f64,
        0.0..2.0f64,
        -1.0..1.0f64,
        0.5..3.0f64,
        (-0.5..0.5f64, -0.5..0.5f64, 0.0..2.0f64, -0.5..0.5f64),
    )
        .prop_map(|(t, a, b, bias, q, c, m, (ql, rho, g, gl))| {
            let s = c * (q * m).sqrt();
            BaseProblem::scalar(t, a, b, bias, q, s, m, ql, rho, g, gl)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_families_pass_validation(base in scalar_base(), k in kernel()) {
        let spec = make_discounted(&base, &k).unwrap();
        let report = validate(&spec, 100);
        prop_assert!(report.is_empty(), "{report}");
        let two = make_discounted(&common::two_state_base(), &k).unwrap();
        prop_assert!(validate(&two, 100).is_empty());
    }

    #[test]
    fn zero_rate_has_no_time_derivative(base in scalar_base(), pairs in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1000)) {
        let spec = make_discounted(&base, &DiscountKernel::Exponential { delta: 0.0 }).unwrap();
        let c = &spec.costs;
        for (u, w) in pairs {
            let t = u * spec.horizon;
            let s = t + w * (spec.horizon - t);
            for f in [&c.q, &c.s, &c.m, &c.q_lin, &c.rho] {
                prop_assert!(f.dvalue_dt(t, s).iter().all(|&x| x == 0.0));
            }
            prop_assert!(spec.terminal.g_dt.eval(t).iter().all(|&x| x == 0.0));
            prop_assert!(spec.terminal.g_lin_dt.eval(t).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn finite_differences_are_second_order(k in kernel()) {
        let err = |points: usize| {
            let times: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
            let vals = TabulatedValues::from_fn(&times, 1, 1, |i, j, o| o[0] = k.lambda(times[i], times[j])).unwrap();
            let table = finite_diff_t(&vals).unwrap();
            let mut worst = 0.0f64;
            for j in 2..points {
                for i in 0..=j {
                    let mut out = [0.0];
                    table.dt_into(times[i], times[j], &mut out);
                    worst = worst.max((out[0] - k.dlambda_dt(times[i], times[j])).abs());
                }
            }
            worst
        };
        let (coarse, fine) = (err(81), err(161));
        prop_assume!(coarse > 1e-11);
        prop_assert!(coarse / fine >= 3.5, "{coarse:e} / {fine:e}");
    }

    #[test]
    fn transitions_compose(a0 in -1.0..1.0f64, a1 in -1.0..1.0f64, c in -1.0..1.0f64, i in 0usize..=40, k in 0usize..=40, j in 0usize..=40) {
        let mut ix = [i, k, j];
        ix.sort_unstable();
        let [j, k, i] = ix;
        let d = DynamicsField {
            a: TimeField::polynomial(vec![
                DMatrix::from_row_slice(2, 2, &[a0, 1.0, -1.0, a1]),
                DMatrix::from_row_slice(2, 2, &[0.0, c, -c, 0.0]),
            ]).unwrap(),
            b: TimeField::zeros(2, 1),
            bias: TimeField::zeros(2, 1),
        };
        let e = open_loop_transition(&d, &TimeGrid::new(1.0, 40).unwrap()).unwrap();
        let lhs = e.get(i, j).unwrap();
        let rhs = e.get(i, k).unwrap() * e.get(k, j).unwrap();
        prop_assert!((&lhs - rhs).amax() <= 1e-8 * lhs.amax().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn riccati_invariants(base in scalar_base(), k in kernel()) {
        let spec = make_discounted(&base, &k).unwrap();
        let g = TimeGrid::new(spec.horizon, 120).unwrap();
        let r = solve_equilibrium_riccati(&spec, &g, &SolveOptions::default()).unwrap();
        prop_assert!(r.diagnostics.iteration.converged);
        prop_assert_eq!(r.p.matrix(g.intervals()), spec.terminal.g.eval(spec.horizon));
        let two = make_discounted(&common::two_state_base(), &k).unwrap();
        let g2 = TimeGrid::new(1.0, 80).unwrap();
        let r2 = solve_equilibrium_riccati(&two, &g2, &SolveOptions::default()).unwrap();
        for i in 0..g2.len() {
            let p = r2.p.matrix(i);
            prop_assert_eq!(p.transpose(), p);
            let q = r2.qbb.matrix(i);
            prop_assert_eq!(q.transpose(), q);
        }
    }

    #[test]
    fn value_is_nonnegative_without_cross_terms(base in scalar_base(), k in kernel()) {
        let mut base = base;
        let zero = TimeField::zeros(1, 1);
        base.s = zero.clone();
        base.q_lin = zero.clone();
        base.rho = zero;
        let spec = make_discounted(&base, &k).unwrap();
        let g = TimeGrid::new(spec.horizon, 120).unwrap();
        let r = solve_equilibrium_riccati(&spec, &g, &SolveOptions::default()).unwrap();
        prop_assert!((0..g.len()).all(|i| r.p.slice(i)[0] >= -1e-8));
    }
}

fn demo() -> &'static EquilibriumSolution {
    static SOL: OnceLock<EquilibriumSolution> = OnceLock::new();
    SOL.get_or_init(|| {
        let spec = common::load("two_state_hyperbolic.json");
        let g = TimeGrid::new(1.0, 200).unwrap();
        EquilibriumSolution::solve(&spec, &g, &SolveOptions::default()).unwrap()
    })
}

fn state() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0..2.0f64, 2).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hamiltonian_is_strictly_convex(k in 0usize..=200, x in state(), w in state()) {
        let sol = demo();
        let t = sol.grid().node(k);
        let ubar = sol.feedback(t, &x).unwrap();
        let base = spike_limit_analytic(sol, k, &x, &ubar).unwrap();
        let off = spike_limit_analytic(sol, k, &x, &(&ubar + &w)).unwrap();
        let mw = (sol.spec().costs.m.value(t, t) * &w).dot(&w);
        prop_assert!((off - base - mw).abs() <= 1e-8 * (1.0 + mw));
    }

    #[test]
    fn bellman_inequality_holds(seed in any::<u64>(), t in 0usize..199, len in 1usize..200, x in state()) {
        let sol = demo();
        let s = (t + len).min(200);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_candidate(&mut rng, t, s, 2, 1.0);
        prop_assert!(bellman_residual(sol, t, s, &x, &u).unwrap() >= -1e-4);
        prop_assert!(bellman_residual(sol, t, s, &x, sol).unwrap().abs() <= 1e-4);
    }

    #[test]
    fn scalar_value_is_quadratic(k in 0usize..=100, x in -3.0..3.0f64) {
        static SOL: OnceLock<EquilibriumSolution> = OnceLock::new();
        let sol = SOL.get_or_init(|| {
            let spec = common::hyperbolic(1.0);
            EquilibriumSolution::solve(&spec, &TimeGrid::new(1.0, 100).unwrap(), &SolveOptions::default()).unwrap()
        });
        let t = sol.grid().node(k);
        let (p, phi, psi) = (sol.riccati().p.slice(k)[0], sol.auxiliary().phi.slice(k)[0], sol.auxiliary().psi[k]);
        let v = sol.value(t, &v1(x)).unwrap();
        prop_assert!((v - (p * x * x + 2.0 * phi * x + psi)).abs() <= 1e-12 * (1.0 + v.abs()));
    }
}
