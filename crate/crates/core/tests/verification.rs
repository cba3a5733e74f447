mod common;

use common::{classical, v1, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tilq_core::nalgebra::DVector;
use tilq_core::verification::{
    bellman_residual, hjb_integral_residual, hjb_probe_nodes, hjb_residual, hjb_residual_sup, random_candidate,
    richardson_first_order, spike_limit_analytic, spike_probe, spike_quotient, spike_schedule,
    spike_schedule_resolvable, uniqueness_probe, value_derivatives, verify, VerifyOptions,
};
use tilq_core::{EquilibriumSolution, Execution, InitialGuess, ProblemSpec, SolveOptions, TimeGrid, TwoTimeField};

fn solve(spec: &ProblemSpec, n: usize) -> EquilibriumSolution {
    let g = TimeGrid::new(spec.horizon, n).unwrap();
    EquilibriumSolution::solve(spec, &g, &SolveOptions::default()).unwrap()
}

fn zero_problem() -> ProblemSpec {
    Scalar {
        a: 0.3,
        b: 1.0,
        m: TwoTimeField::constant(common::m1(2.0)),
        ..Default::default()
    }
    .build()
}

#[test]
fn schedule_and_extrapolation() {
    let eps = spike_schedule(2.0);
    assert_eq!(eps, vec![0.04, 0.02, 0.01, 0.005]);
    assert!(spike_schedule_resolvable(&TimeGrid::new(1.0, 1000).unwrap()));
    assert!(!spike_schedule_resolvable(&TimeGrid::new(1.0, 500).unwrap()));
    // q(ε) = 3 − 2ε is extrapolated exactly.
    let q: Vec<f64> = eps.iter().map(|e| 3.0 - 2.0 * e).collect();
    assert!((richardson_first_order(&eps, &q).unwrap() - 3.0).abs() < 1e-14);
    assert!(richardson_first_order(&eps[..1], &q[..1]).is_err());
}

#[test]
fn spike_quotient_rejects_unresolved_widths() {
    let sol = solve(&classical(), 100);
    assert!(spike_quotient(&sol, 0, &v1(1.0), &v1(0.0), 0.01).is_err());
    assert!(spike_quotient(&sol, 99, &v1(1.0), &v1(0.0), 0.05).is_err());
    assert!(spike_quotient(&sol, 0, &v1(1.0), &v1(0.0), 0.05).is_ok());
}

#[test]
fn spike_at_equilibrium_vanishes() {
    let sol = solve(&classical(), 1000);
    let x = v1(1.0);
    let ubar = sol.feedback(0.0, &x).unwrap();
    let rep = spike_probe(&sol, 0, &x, &ubar).unwrap();
    assert!(rep.extrapolated.abs() <= 1e-4);
    assert!(spike_limit_analytic(&sol, 0, &x, &ubar).unwrap().abs() <= 1e-8);
}

#[test]
fn spike_on_zero_problem_is_control_cost() {
    let sol = solve(&zero_problem(), 1000);
    let x = v1(0.7);
    for v in [-1.5, 0.5, 2.0] {
        let rep = spike_probe(&sol, 100, &x, &v1(v)).unwrap();
        assert!(rep.quotients.iter().all(|&q| q > 0.0));
        assert!((rep.extrapolated - 2.0 * v * v).abs() <= 0.01 * 2.0 * v * v);
    }
}

#[test]
fn classical_spike_limit_is_control_weight() {
    let sol = solve(&classical(), 1000);
    let x = v1(1.0);
    let v = sol.feedback(0.0, &x).unwrap() + v1(1.0);
    let rep = spike_probe(&sol, 0, &x, &v).unwrap();
    assert!((rep.extrapolated - 1.0).abs() <= 0.01, "{}", rep.extrapolated);
    assert!((rep.reference - 1.0).abs() < 1e-12);
    assert!((rep.analytic - 1.0).abs() <= 1e-8);
}

#[test]
fn hamiltonian_completes_the_square() {
    for file in ["hyperbolic_scalar_k1.json", "two_state_hyperbolic.json"] {
        let spec = common::load(file);
        let sol = solve(&spec, 1000);
        let m = spec.dims.m;
        for (k, scale) in [(0usize, 1.0), (333, -0.6), (810, 2.0)] {
            let t = sol.grid().node(k);
            let x = DVector::from_fn(spec.dims.n, |i, _| scale * (1.0 + i as f64));
            let ubar = sol.feedback(t, &x).unwrap();
            let base = spike_limit_analytic(&sol, k, &x, &ubar).unwrap();
            assert!(base.abs() <= 1e-8, "{file}: {base:e}");
            let w = DVector::from_fn(m, |i, _| 0.8 - 0.5 * i as f64);
            let off = spike_limit_analytic(&sol, k, &x, &(&ubar + &w)).unwrap();
            let mw = (spec.costs.m.value(t, t) * &w).dot(&w);
            assert!((off - base - mw).abs() <= 1e-8);
            let rep = spike_probe(&sol, k.min(900), &x, &(&ubar + &w)).unwrap_or_else(|e| panic!("{e}"));
            assert!(
                (rep.extrapolated - rep.reference).abs() <= 0.01 * rep.reference,
                "{file} {k}"
            );
        }
    }
}

#[test]
fn bellman_examples() {
    let sol = solve(&common::hyperbolic(1.0), 400);
    let x = v1(0.9);
    assert_eq!(bellman_residual(&sol, 120, 120, &x, &sol).unwrap(), 0.0);
    for (t, s) in [(0, 400), (50, 200), (300, 301)] {
        assert!(bellman_residual(&sol, t, s, &x, &sol).unwrap().abs() <= 1e-4);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..25 {
        let u = random_candidate(&mut rng, 40, 360, 1, 1.0);
        assert!(u.breaks.len() <= 8 && u.breaks[0] == 40);
        assert!(u.values.iter().all(|v| v[0].abs() <= 2.0));
        assert!(bellman_residual(&sol, 40, 360, &x, &u).unwrap() >= -1e-4);
    }
    assert!(bellman_residual(&sol, 200, 100, &x, &sol).is_err());
}

#[test]
fn residuals_of_zero_problem_vanish() {
    let sol = solve(&zero_problem(), 200);
    let states = [v1(-1.0), v1(0.0), v1(2.0)];
    assert_eq!(hjb_residual_sup(&sol, &states, Execution::Sequential).unwrap().0, 0.0);
    for x in &states {
        assert_eq!(hjb_integral_residual(&sol, 20, x).unwrap(), 0.0);
    }
}

#[test]
fn classical_residuals_are_small() {
    let sol = solve(&classical(), 2000);
    let states = [v1(-1.0), v1(0.5), v1(1.0)];
    let (sup, witness) = hjb_residual_sup(&sol, &states, Execution::default()).unwrap();
    assert!(sup <= 1e-3, "{sup:e}");
    assert_eq!(witness.x.len(), 1);
    for &k in &hjb_probe_nodes(sol.grid()) {
        for x in &states {
            assert!(hjb_integral_residual(&sol, k, x).unwrap().abs() <= 1e-3);
        }
    }
}

#[test]
fn value_time_derivative_solves_the_equations() {
    // V_t from the equation right-hand sides equals −(⟨∇V,Ax+Bū+b⟩ + L − R).
    let sol = solve(&common::hyperbolic(0.5), 400);
    let (dp, dphi, dpsi) = value_derivatives(&sol, 0);
    assert!(dp.iter().chain(dphi.iter()).all(|x| x.is_finite()) && dpsi.is_finite());
    for k in [0, 100, 399] {
        let x = v1(0.6);
        assert!(hjb_residual(&sol, k, &x).unwrap().abs() <= 1e-3);
    }
}

#[test]
fn origin_start_matches_affine_path() {
    // From x = 0 the trajectory is b̃ alone; the residual is the same whether
    // computed directly or by linearity of the two starting points.
    let sol = solve(&common::hyperbolic(2.0), 300);
    let r0 = hjb_integral_residual(&sol, 30, &v1(0.0)).unwrap();
    let again = hjb_integral_residual(&sol, 30, &v1(0.0)).unwrap();
    assert_eq!(r0, again);
    assert!(r0.abs() <= 1e-3);
}

#[test]
fn uniqueness_examples() {
    let g = TimeGrid::new(1.0, 500).unwrap();
    let opts = SolveOptions::default();
    let pts = vec![(0, v1(1.0)), (250, v1(-0.5))];
    let rep = uniqueness_probe(
        &classical(),
        &g,
        &opts,
        &[InitialGuess::Zero, InitialGuess::Terminal],
        &pts,
    )
    .unwrap();
    assert!(rep.p_distance <= 1e-6 && rep.value_distance <= 1e-6);
    let dup = uniqueness_probe(&classical(), &g, &opts, &[InitialGuess::Zero, InitialGuess::Zero], &pts).unwrap();
    assert_eq!(dup.p_distance, 0.0);
    let hyp = common::load("hyperbolic_scalar_k1.json");
    let inits = [
        InitialGuess::Zero,
        InitialGuess::Terminal,
        InitialGuess::ScaledTerminal(5.0),
    ];
    let rep = uniqueness_probe(&hyp, &g, &opts, &inits, &pts).unwrap();
    assert!(rep.p_distance <= 1e-6);
    assert_eq!(rep.iterations.len(), 3);
    assert!(uniqueness_probe(&hyp, &g, &opts, &inits[..1], &pts).is_err());
}

#[test]
fn full_battery_on_classical_case() {
    let sol = solve(&classical(), 1000);
    let report = verify(&sol, &VerifyOptions::default(), &SolveOptions::default()).unwrap();
    for c in &report.checks {
        assert!(c.passed, "{} = {:e} (tolerance {:e})", c.name, c.value, c.tolerance);
    }
    assert_eq!(report.seed, 42);
    assert_eq!(report.spikes.len(), 60);
    assert_eq!(report.bellman.len(), 100);
    assert!(report.notes.iter().any(|n| n.contains("liminf")));
}

#[test]
fn coarse_grid_skips_spikes_with_a_note() {
    let sol = solve(&common::hyperbolic(1.0), 300);
    let opts = VerifyOptions {
        uniqueness: false,
        bellman_candidates: 5,
        ..Default::default()
    };
    let report = verify(&sol, &opts, &SolveOptions::default()).unwrap();
    assert!(report.spikes.is_empty());
    assert!(!report.checks.iter().any(|c| c.name.starts_with("spike")));
    assert!(report.notes.iter().any(|n| n.contains("skipped")));
}

#[test]
fn reports_are_reproducible() {
    let sol = solve(&common::hyperbolic(0.5), 800);
    let opts = VerifyOptions {
        uniqueness: false,
        ..Default::default()
    };
    let a = verify(&sol, &opts, &SolveOptions::default()).unwrap();
    let seq = VerifyOptions {
        execution: Execution::Sequential,
        ..opts.clone()
    };
    let b = verify(&sol, &seq, &SolveOptions::default()).unwrap();
    assert_eq!(a.checks, b.checks);
    assert_eq!(a.spikes, b.spikes);
    let other = verify(&sol, &VerifyOptions { seed: 7, ..opts }, &SolveOptions::default()).unwrap();
    assert_ne!(a.bellman, other.bellman);
}
