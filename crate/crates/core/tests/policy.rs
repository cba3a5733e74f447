mod common;

use common::{classical, m1, v1, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilq_core::nalgebra::DVector;
use tilq_core::policy::{cost, simulate_control, Feedback, OpenLoop, PiecewiseConstant};
use tilq_core::verification::gradient_error;
use tilq_core::{
    make_discounted, DiscountKernel, EquilibriumSolution, ProblemSpec, SolveOptions, TerminalField, TimeField,
    TimeGrid, TwoTimeField,
};

fn solve(spec: &ProblemSpec, n: usize) -> EquilibriumSolution {
    let g = TimeGrid::new(spec.horizon, n).unwrap();
    EquilibriumSolution::solve(spec, &g, &SolveOptions::default()).unwrap()
}

fn zero_problem() -> ProblemSpec {
    Scalar {
        a: 0.5,
        b: 1.0,
        ..Default::default()
    }
    .build()
}

#[test]
fn zero_problem_has_zero_value_and_control() {
    let sol = solve(&zero_problem(), 50);
    for t in [0.0, 0.37, 1.0] {
        for x in [-2.0, 0.0, 3.0] {
            assert_eq!(sol.value(t, &v1(x)).unwrap(), 0.0);
            assert_eq!(sol.feedback(t, &v1(x)).unwrap()[0], 0.0);
        }
    }
    let traj = sol.simulate_equilibrium(0, &v1(0.0)).unwrap();
    assert!(traj.states.iter().all(|y| y[0] == 0.0));
}

#[test]
fn classical_value_gradient_and_feedback() {
    let sol = solve(&classical(), 2000);
    assert!((sol.value(0.0, &v1(2.0)).unwrap() - 2.0).abs() <= 4e-4);
    assert!((sol.grad_value(0.0, &v1(1.0)).unwrap()[0] - 1.0).abs() <= 2e-4);
    assert!((sol.feedback(0.0, &v1(1.0)).unwrap()[0] + 0.5).abs() <= 2e-4);
}

#[test]
fn origin_values() {
    let sol = solve(&common::hyperbolic(1.0), 200);
    let a = sol.auxiliary();
    let zero = v1(0.0);
    for i in [0, 57, 200] {
        let t = sol.grid().node(i);
        assert_eq!(sol.value(t, &zero).unwrap(), a.psi[i]);
        assert_eq!(sol.grad_value(t, &zero).unwrap()[0], 2.0 * a.phi.slice(i)[0]);
        assert!((sol.feedback(t, &zero).unwrap()[0] + a.upsilon.slice(i)[0]).abs() < 1e-14);
        assert_eq!(sol.error_function_closed(i, &zero).unwrap(), a.omega[i]);
    }
    assert!(sol.value(1.5, &zero).is_err());
    assert!(sol.value(0.0, &DVector::zeros(2)).is_err());
}

#[test]
fn gradient_matches_central_differences() {
    for spec in [common::hyperbolic(2.0), common::load("two_state_hyperbolic.json")] {
        let sol = solve(&spec, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let t = rng.random_range(0.0..spec.horizon);
            let x = DVector::from_fn(spec.dims.n, |_, _| rng.random_range(-2.0..2.0));
            assert!(gradient_error(&sol, t, &x).unwrap() <= 1e-6);
        }
    }
}

#[test]
fn feedback_forms_agree() {
    let spec = common::load("two_state_hyperbolic.json");
    let sol = solve(&spec, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let nodes: Vec<f64> = sol.grid().nodes();
    for (k, &t) in nodes.iter().enumerate() {
        let x = if k % 2 == 0 {
            DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0))
        } else {
            DVector::zeros(2)
        };
        let a = sol.feedback(t, &x).unwrap();
        let b = sol.feedback_gain_form(t, &x).unwrap();
        assert!((&a - &b).amax() <= 1e-10 * (1.0 + a.amax()));
    }
    for _ in 0..100 {
        let t = rng.random_range(0.0..1.0);
        let x = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
        let k = sol.grid().nearest(t);
        let t = sol.grid().node(k);
        let a = sol.feedback(t, &x).unwrap();
        let b = sol.feedback_gain_form(t, &x).unwrap();
        assert!((&a - &b).amax() <= 1e-10 * (1.0 + a.amax()));
    }
}

#[test]
fn equilibrium_trajectory_examples() {
    let drift_only = Scalar {
        bias: 1.0,
        ..Default::default()
    }
    .build();
    let sol = solve(&drift_only, 40);
    let traj = sol.simulate_equilibrium(0, &v1(0.0)).unwrap();
    for (i, y) in traj.states.iter().enumerate() {
        assert!((y[0] - sol.grid().node(i)).abs() < 1e-13);
    }

    // Classical: ẏ = −y/(2−s), y(0) = 1, so y(s) = (2−s)/2.
    let sol = solve(&classical(), 1000);
    let traj = sol.simulate_equilibrium(0, &v1(1.0)).unwrap();
    assert_eq!(traj.states[0], v1(1.0));
    for (i, y) in traj.states.iter().enumerate() {
        assert!((y[0] - (2.0 - sol.grid().node(i)) / 2.0).abs() < 1e-5);
    }
    let later = sol.simulate_equilibrium(600, &v1(-0.4)).unwrap();
    assert_eq!(later.start, 600);
    assert_eq!(later.states.len(), 401);
    assert_eq!(later.state_at(600), &v1(-0.4));
}

#[test]
fn controlled_simulation_examples() {
    let g = TimeGrid::new(1.0, 100).unwrap();
    let still = Scalar {
        b: 1.0,
        ..Default::default()
    }
    .build();
    let zero = OpenLoop::new(&g, &vec![v1(0.0); g.len()]).unwrap();
    let traj = simulate_control(&still, &g, &zero, 0, &v1(1.3)).unwrap();
    assert!(traj.states.iter().all(|y| y[0] == 1.3));

    let growth = Scalar {
        a: 1.0,
        ..Default::default()
    }
    .build();
    let traj = simulate_control(&growth, &g, &zero, 0, &v1(1.0)).unwrap();
    assert!((traj.states[100][0] - 1f64.exp()).abs() < 1e-8);

    // Constant open-loop u = 2 on ẏ = u: y(1) = x + 2.
    let two = PiecewiseConstant {
        breaks: vec![0],
        values: vec![v1(2.0)],
    };
    let traj = simulate_control(&still, &g, &two, 0, &v1(0.5)).unwrap();
    assert!((traj.states[100][0] - 2.5).abs() < 1e-13);
    assert!(simulate_control(&still, &g, &two, 0, &DVector::zeros(2)).is_err());
}

#[test]
fn feedback_simulation_matches_stored_transition() {
    for spec in [common::hyperbolic(1.0), common::load("two_state_hyperbolic.json")] {
        let sol = solve(&spec, 400);
        let x = DVector::from_fn(spec.dims.n, |i, _| 1.0 - 0.7 * i as f64);
        for start in [0, 130] {
            let a = sol.simulate_equilibrium(start, &x).unwrap();
            let b = simulate_control(&spec, sol.grid(), &sol, start, &x).unwrap();
            let worst = a
                .states
                .iter()
                .zip(&b.states)
                .map(|(p, q)| (p - q).amax())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-6, "{worst:e}");
        }
    }
}

#[test]
fn cost_examples() {
    let g = TimeGrid::new(1.0, 100).unwrap();
    let spec = Scalar {
        q: TwoTimeField::constant(m1(1.0)),
        terminal: TerminalField::constant(m1(1.0), v1(0.0)),
        ..Default::default()
    }
    .build();
    let zero = OpenLoop::new(&g, &vec![v1(0.0); g.len()]).unwrap();
    let traj = simulate_control(&spec, &g, &zero, 0, &v1(1.0)).unwrap();
    assert!((cost(&spec, &g, &traj, 0).unwrap() - 2.0).abs() < 1e-14);

    let free = Scalar {
        m: TwoTimeField::zeros(1, 1),
        ..Default::default()
    }
    .build();
    let traj = simulate_control(&free, &g, &zero, 0, &v1(1.0)).unwrap();
    assert_eq!(cost(&free, &g, &traj, 0).unwrap(), 0.0);
    assert!(cost(&free, &g, &traj, 3).is_err());

    let sol = solve(&classical(), 2000);
    let traj = sol.simulate_equilibrium(0, &v1(1.0)).unwrap();
    let j = cost(sol.spec(), sol.grid(), &traj, 0).unwrap();
    assert!((j - sol.value(0.0, &v1(1.0)).unwrap()).abs() <= 1e-3);
    assert!((j - 0.5).abs() <= 1e-3);
}

/// The cost seen from `t` weights the whole remaining path with `λ(t,·)`.
#[test]
fn cost_freezes_the_evaluation_time() {
    let base = common::coupled_base();
    let k = 1.5;
    let spec = make_discounted(&base, &DiscountKernel::Hyperbolic { k }).unwrap();
    let consistent = base.undiscounted().unwrap();
    let g = TimeGrid::new(1.0, 400).unwrap();
    let start = 160;
    let t = g.node(start);
    let u = PiecewiseConstant {
        breaks: vec![start, 250],
        values: vec![v1(0.4), v1(-1.1)],
    };
    let traj = simulate_control(&spec, &g, &u, start, &v1(0.8)).unwrap();

    // Same path under λ ≡ 1 reproduces the time-consistent cost exactly.
    let tc = make_discounted(&base, &DiscountKernel::Exponential { delta: 0.0 }).unwrap();
    assert_eq!(
        cost(&tc, &g, &traj, start).unwrap(),
        cost(&consistent, &g, &traj, start).unwrap()
    );

    // Independent step-by-step trapezoid with λ(t, s) against the running
    // weight λ(s, s) = 1. Each step uses the control applied on it.
    let lam = |s: f64| 1.0 / (1.0 + k * (s - t));
    let (q, sw, m, ql, rho, gw, gl) = (1.0, 0.2, 1.0, 0.3, 0.1, 1.0, 0.5);
    let lagr = |y: f64, u: f64| q * y * y + 2.0 * sw * y * u + m * u * u + 2.0 * ql * y + 2.0 * rho * u;
    let h = g.step();
    let (mut frozen, mut running) = (0.0, 0.0);
    for l in 0..traj.states.len() - 1 {
        let (s0, s1) = (g.node(start + l), g.node(start + l + 1));
        let a = lagr(traj.states[l][0], traj.controls[l][0]);
        let b = lagr(traj.states[l + 1][0], traj.controls_left[l + 1][0]);
        frozen += 0.5 * h * (lam(s0) * a + lam(s1) * b);
        running += 0.5 * h * (a + b);
    }
    let yt = traj.states.last().unwrap()[0];
    let term = gw * yt * yt + 2.0 * gl * yt;
    let expected = frozen + lam(1.0) * term;
    let got = cost(&spec, &g, &traj, start).unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    let undiscounted = running + term;
    assert!((got - undiscounted).abs() > 1e-3);
}

#[test]
fn error_function_examples() {
    let sol = solve(&common::coupled_base().undiscounted().unwrap(), 100);
    for i in [0, 50] {
        assert_eq!(sol.error_function_direct(i, &v1(1.7)).unwrap(), 0.0);
        assert_eq!(sol.error_function_closed(i, &v1(1.7)).unwrap(), 0.0);
    }

    // G(t) = 2 − t and a motionless state: R = Ġ·1² = −1.
    let spec = Scalar {
        terminal: TerminalField::from_values(
            TimeField::polynomial(vec![m1(2.0), m1(-1.0)]).unwrap(),
            TimeField::zeros(1, 1),
        )
        .unwrap(),
        ..Default::default()
    }
    .build();
    let sol = solve(&spec, 20);
    assert!((sol.error_function_direct(0, &v1(1.0)).unwrap() + 1.0).abs() < 1e-14);
    assert!((sol.error_function_closed(0, &v1(1.0)).unwrap() + 1.0).abs() < 1e-14);
}

#[test]
fn error_function_forms_agree() {
    for file in common::DEMO_FILES {
        let spec = common::load(file);
        let sol = solve(&spec, 400);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let i = rng.random_range(0..sol.grid().intervals());
            let x = DVector::from_fn(spec.dims.n, |_, _| rng.random_range(-2.0..2.0));
            let d = sol.error_function_direct(i, &x).unwrap();
            let c = sol.error_function_closed(i, &x).unwrap();
            assert!((d - c).abs() <= 1e-4 * (1.0 + c.abs()), "{file}: {d} vs {c}");
        }
    }
}

#[test]
fn value_equals_cost_along_equilibrium() {
    let spec = common::load("two_state_exponential.json");
    let sol = solve(&spec, 500);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let i = rng.random_range(0..sol.grid().intervals());
        let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let v = sol.value(sol.grid().node(i), &x).unwrap();
        let traj = sol.simulate_equilibrium(i, &x).unwrap();
        let j = cost(&spec, sol.grid(), &traj, i).unwrap();
        assert!((v - j).abs() <= 1e-3 * (1.0 + v.abs()));
    }
}

#[test]
fn open_loop_table_is_interpolated() {
    let g = TimeGrid::new(1.0, 4).unwrap();
    let values: Vec<_> = (0..5).map(|i| v1(i as f64)).collect();
    let u = OpenLoop::new(&g, &values).unwrap();
    use tilq_core::ControlPolicy;
    assert!((u.control(0, 0.125, &v1(0.0))[0] - 0.5).abs() < 1e-15);
    assert!(OpenLoop::new(&g, &values[..3]).is_err());
    let f = Feedback(|t: f64, x: &DVector<f64>| x * t);
    assert_eq!(f.control(0, 0.5, &v1(4.0))[0], 2.0);
}
