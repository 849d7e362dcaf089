mod common;

use std::time::Instant;

use approx::assert_relative_eq;
use common::{reference, rk4, LinearNoise};
use proptest::prelude::*;
use superpose::closedform::{superposed_mean, superposed_variance, ModelKind};
use superpose::riccati::{ag_mean, ag_variance, solve_lyapunov, solve_riccati, LyapunovOrder, Numerics};
use superpose::simulate::{empirical_mgf, simulate_ensemble, SimConfig};

fn recording(interval: f64) -> Numerics {
    Numerics {
        record_interval: Some(interval),
        max_records: 100_000,
        ..Numerics::default()
    }
}

#[test]
fn unit_weight_matches_scalar_oracle() {
    let p = reference(ModelKind::Aggregation, 1.0, 4.0);
    let grid = p.mixture().discretize(48).unwrap();
    let (mu, lambda) = (p.jump().frequency(), p.jump().rate());
    for theta in [0.3, 1.0, 5.0] {
        let sol = solve_riccati(&p, &grid, theta, &recording(0.25)).unwrap();
        assert!(sol.trajectory.len() > 10);
        let mut worst = 0.0f64;
        for (i, &r) in grid.speeds().iter().enumerate() {
            let f = |b: f64| r * (-b + mu * b / (lambda + b));
            let (mut t, mut y) = (0.0, theta);
            for snap in &sol.trajectory {
                y = rk4(f, y, t, snap.time, 1e-4);
                t = snap.time;
                worst = worst.max((snap.values[i] - y).abs());
            }
        }
        assert!(worst < 1e-6, "theta={theta}: sup error {worst}");
    }
}

#[test]
fn linear_regime() {
    let p = reference(ModelKind::Aggregation, 1.0, 2.0);
    let grid = p.mixture().discretize(32).unwrap();
    let theta = 1e-6;
    let sol = solve_riccati(&p, &grid, theta, &recording(0.5)).unwrap();
    let m1 = p.jump().m1();
    for snap in sol.trajectory.iter().filter(|s| s.time <= 20.0) {
        for (&b, &r) in snap.values.iter().zip(grid.speeds()) {
            let expected = theta * (-(1.0 - m1) * r * snap.time).exp();
            // Relative accuracy only means something above round-off of θ.
            assert!((b - expected).abs() <= 1e-3 * expected + 1e-12 * theta, "t={} r={r}: {b} vs {expected}", snap.time);
        }
    }
}

#[test]
fn lyapunov_first_order_at_unit_weight() {
    let p = reference(ModelKind::Aggregation, 1.0, 4.0);
    let grid = p.mixture().discretize(64).unwrap();
    let sol = solve_lyapunov(&p, &grid, LyapunovOrder::First, &recording(0.5)).unwrap();
    let m1 = p.jump().m1();
    assert!(sol.first[0].values.iter().all(|&e| e == 1.0));
    for snap in &sol.first {
        for (&e, &r) in snap.values.iter().zip(grid.speeds()) {
            assert!((e - (-(1.0 - m1) * r * snap.time).exp()).abs() < 1e-6);
        }
    }
    let r_mass = grid.inv_speed_mass();
    assert_relative_eq!(sol.first_integral, r_mass / (1.0 - m1), max_relative = 5e-3);
}

#[test]
fn lyapunov_bounds() {
    for w in [0.0, 0.3, 0.8] {
        let p = reference(ModelKind::Aggregation, w, 2.0);
        let grid = p.mixture().discretize(64).unwrap();
        let sol = solve_lyapunov(&p, &grid, LyapunovOrder::Second, &recording(1.0)).unwrap();
        let m1 = p.jump().m1();
        let upper = (1.0 - w * m1) / (1.0 - m1);
        assert!(sol.second[0].values.iter().all(|&e| e == 0.0));
        for snap in &sol.first {
            assert!(snap.values.iter().all(|&e| (0.0..=upper + 1e-9).contains(&e)));
        }
        for snap in &sol.second {
            assert!(snap.values.iter().all(|&e| e >= 0.0));
        }
    }
}

#[test]
fn riccati_bounds_and_decay() {
    for (w, alpha) in [(0.0, 2.0), (0.5, 4.0), (0.9, 1.5)] {
        let p = reference(ModelKind::Aggregation, w, alpha);
        let grid = p.mixture().discretize(64).unwrap();
        let theta = 3.0;
        let sol = solve_riccati(&p, &grid, theta, &recording(0.5)).unwrap();
        let upper = theta / (1.0 - p.jump().m1());
        assert!(sol.trajectory[0].values.iter().all(|&b| b == theta));
        for snap in &sol.trajectory {
            assert!(snap.values.iter().all(|&b| b >= -1e-12 && b <= upper + 1e-9));
        }
        assert_eq!(sol.non_monotone_steps, 0, "w={w} alpha={alpha}");
    }
}

#[test]
fn mgf_is_a_laplace_transform() {
    let p = reference(ModelKind::Aggregation, 0.4, 4.0);
    let grid = p.mixture().discretize(64).unwrap();
    let mean = superposed_mean(&p);
    let values: Vec<f64> = [0.1, 1.0, 10.0]
        .iter()
        .map(|s| solve_riccati(&p, &grid, s / mean, &Numerics::default()).unwrap().mgf().value)
        .collect();
    assert!(values.iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(values.windows(2).all(|v| v[1] < v[0]));
    let zero = solve_riccati(&p, &grid, 0.0, &Numerics::default()).unwrap();
    assert_eq!(zero.mgf().value, 1.0);
}

#[test]
fn mgf_slope_gives_the_mean() {
    let p = reference(ModelKind::Aggregation, 0.25, 4.0);
    let grid = p.mixture().discretize(64).unwrap();
    let h = 1e-4;
    let numerics = Numerics::default();
    let at = |theta: f64| solve_riccati(&p, &grid, theta, &numerics).unwrap().mgf().value;
    // Central difference around h, using θ ∈ {0, 2h}.
    let slope = (at(0.0) - at(2.0 * h)) / (2.0 * h);
    let mean = ag_mean(&p, &grid, &numerics).unwrap();
    assert_relative_eq!(slope, mean, max_relative = 1e-2);
}

#[test]
fn mean_identity() {
    for (w, alpha) in [(0.0, 2.0), (0.5, 2.0), (1.0, 4.0), (0.25, 4.0)] {
        let p = reference(ModelKind::Aggregation, w, alpha);
        let grid = p.mixture().discretize(512).unwrap();
        let m = ag_mean(&p, &grid, &Numerics::default()).unwrap();
        assert!((m - superposed_mean(&p)).abs() <= 5e-3 * superposed_mean(&p), "w={w}: {m}");
    }
}

#[test]
fn variance_matches_linear_noise_oracle() {
    for (w, alpha) in [(0.0, 4.0), (0.5, 2.0), (0.8, 1.6)] {
        let p = reference(ModelKind::Aggregation, w, alpha);
        let grid = p.mixture().discretize(20).unwrap();
        let oracle = LinearNoise::new(&p, &grid);
        assert_relative_eq!(oracle.total_mean(), superposed_mean(&p), max_relative = 1e-10);
        let v = ag_variance(&p, &grid, &Numerics::default()).unwrap();
        assert_relative_eq!(v.value, oracle.total_variance(), max_relative = 5e-3);
        assert_relative_eq!(v.lyapunov_route, oracle.total_variance(), max_relative = 5e-3);
    }
}

#[test]
fn variance_ordering_and_routes() {
    // The long-memory case needs long horizons; a coarser grid keeps it quick.
    for (alpha, n) in [(2.0, 128), (4.0, 512)] {
        let prev = reference(ModelKind::Previous, 1.0, alpha);
        let grid = prev.mixture().discretize(n).unwrap();
        let v_prev = superposed_variance(&prev).unwrap();
        let at_one = ag_variance(&prev.with_kind(ModelKind::Aggregation, 1.0).unwrap(), &grid, &Numerics::default()).unwrap();
        assert_relative_eq!(at_one.value, v_prev, max_relative = 1e-2);
        let mut last = 0.0;
        for w in [0.0, 0.25, 0.5, 0.75] {
            let ag = ag_variance(&prev.with_kind(ModelKind::Aggregation, w).unwrap(), &grid, &Numerics::default()).unwrap();
            let mf = superposed_variance(&prev.with_kind(ModelKind::MeanField, w).unwrap()).unwrap();
            assert!(mf <= ag.value && ag.value <= v_prev, "alpha={alpha} w={w}: {mf} {} {v_prev}", ag.value);
            assert!(ag.relative_gap <= 0.02);
            assert!(ag.value > last);
            last = ag.value;
        }
        // w = 0 lies strictly inside.
        let strict = ag_variance(&prev.with_kind(ModelKind::Aggregation, 0.0).unwrap(), &grid, &Numerics::default()).unwrap();
        assert!(strict.value > 1.01 * superposed_variance(&prev.with_kind(ModelKind::MeanField, 0.0).unwrap()).unwrap());
        assert!(strict.value < 0.99 * v_prev);
    }
}

#[test]
fn refinement_is_stable() {
    let p = reference(ModelKind::Aggregation, 0.5, 4.0);
    let coarse = ag_variance(&p, &p.mixture().discretize(512).unwrap(), &Numerics::default()).unwrap();
    let fine_numerics = Numerics {
        dt: 5e-4,
        ..Numerics::default()
    };
    let fine = ag_variance(&p, &p.mixture().discretize(1024).unwrap(), &fine_numerics).unwrap();
    assert_relative_eq!(coarse.value, fine.value, max_relative = 5e-3);
}

#[test]
fn mgf_agrees_with_simulation() {
    let start = Instant::now();
    let p = reference(ModelKind::Aggregation, 1.0, 4.0);
    let grid = p.mixture().discretize(64).unwrap();
    let cfg = SimConfig {
        grid_size: 64,
        replicates: 100,
        horizon: 100.0,
        sample_interval: 0.5,
        ..SimConfig::default()
    };
    let paths = simulate_ensemble(&p, &grid, &cfg).unwrap();
    for theta in [0.5, 1.5] {
        let exact = solve_riccati(&p, &grid, theta, &Numerics::default()).unwrap().mgf().value;
        let mc = empirical_mgf(&paths, theta);
        assert!(mc.z_score(exact) < 3.0, "theta={theta}: {exact} vs {mc:?}");
    }
    eprintln!("mgf vs simulation: {:?}", start.elapsed());
}

#[test]
fn rejects_bad_input() {
    let p = reference(ModelKind::Aggregation, 0.5, 4.0);
    let grid = p.mixture().discretize(8).unwrap();
    assert!(solve_riccati(&p, &grid, -1.0, &Numerics::default()).is_err());
    let bad = Numerics {
        dt: 0.0,
        ..Numerics::default()
    };
    assert!(solve_riccati(&p, &grid, 1.0, &bad).is_err());
    let mf = p.with_kind(ModelKind::MeanField, 0.5).unwrap();
    assert!(ag_variance(&mf, &grid, &Numerics::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nesting_and_bounds(
        w in 0.0f64..=1.0,
        alpha in 1.5f64..6.0,
        theta in 0.01f64..10.0,
    ) {
        let p = reference(ModelKind::Aggregation, w, alpha);
        let grid = p.mixture().discretize(16).unwrap();
        let sol = solve_riccati(&p, &grid, theta, &recording(1.0)).unwrap();
        let upper = theta / (1.0 - p.jump().m1());
        for snap in &sol.trajectory {
            prop_assert!(snap.values.iter().all(|&b| b >= 0.0 && b <= upper + 1e-9));
        }
        let mgf = sol.mgf().value;
        prop_assert!(mgf > 0.0 && mgf < 1.0);
        // Jensen: E[e^{-θZ}] ≥ e^{-θE[Z]}.
        prop_assert!(mgf >= (-theta * superposed_mean(&p)).exp() * (1.0 - 1e-6));
    }
}
