use approx::assert_relative_eq;
use proptest::prelude::*;
use superpose::closedform::{
    hurst_exponent, nominal_stats, nondimensionalize, superposed_acf, superposed_jump_rate, superposed_mean,
    superposed_skewness_cumulant, superposed_skewness_mf, superposed_variance, ModelKind, ModelParams,
};
use superpose::measures::{JumpMeasure, ReversionMixture};

fn gamma_params(kind: ModelKind, b: f64, w: f64, mu: f64, lambda: f64, shape: f64, scale: f64) -> ModelParams {
    ModelParams::new(
        kind,
        b,
        w,
        JumpMeasure::new(mu, lambda).unwrap(),
        ReversionMixture::gamma(shape, scale).unwrap(),
    )
    .unwrap()
}

/// Skewness written out term by term from the raw parameters.
fn skewness_oracle(b: f64, w: f64, mu: f64, lambda: f64, r: f64) -> f64 {
    let m1 = mu / lambda;
    let m2 = 2.0 * mu / (lambda * lambda);
    let m3 = 6.0 * mu / (lambda * lambda * lambda);
    let var = m2 * b * r / (2.0 * (1.0 - m1) * (1.0 - w * m1));
    let third = b / ((1.0 - m1) * (1.0 - w * m1)) * (m3 / 3.0 + w * m2 * m2 / 2.0) * r;
    third / var.powf(1.5)
}

#[test]
fn fitted_row_skewness_by_independent_evaluation() {
    let p = gamma_params(ModelKind::Previous, 2.071e4, 1.0, 8.190e-6, 2.130e-5, 1.438, 10.53);
    let r = 1.0 / (10.53 * 0.438);
    let oracle = skewness_oracle(2.071e4, 1.0, 8.190e-6, 2.130e-5, r);
    assert_relative_eq!(superposed_skewness_mf(&p).unwrap(), oracle, max_relative = 1e-12);
    // The published Nagara value coincides with a different river; ours does not.
    assert!((superposed_skewness_mf(&p).unwrap() - 4.994).abs() > 0.1);
}

#[test]
fn variance_halves_at_zero_weight() {
    let prev = gamma_params(ModelKind::Previous, 1.0, 1.0, 0.25, 0.5, 4.0, 2.0 / 3.0);
    let mf = prev.with_kind(ModelKind::MeanField, 0.0).unwrap();
    assert_relative_eq!(
        superposed_variance(&mf).unwrap(),
        superposed_variance(&prev).unwrap() * 0.5,
        max_relative = 1e-15
    );
    // Nondimensional reference configuration used across the test-suite.
    assert_relative_eq!(superposed_variance(&prev).unwrap(), 2.0, max_relative = 1e-14);
}

#[test]
fn jump_rate_linear_in_source() {
    let p = gamma_params(ModelKind::MeanField, 1.5, 0.3, 0.25, 0.5, 2.0, 1.0);
    let q = gamma_params(ModelKind::MeanField, 3.0, 0.3, 0.25, 0.5, 2.0, 1.0);
    assert_relative_eq!(superposed_jump_rate(&q), 2.0 * superposed_jump_rate(&p), max_relative = 1e-15);
    let tiny = gamma_params(ModelKind::MeanField, 1e-12, 0.3, 0.25, 0.5, 2.0, 1.0);
    assert!(superposed_jump_rate(&tiny) < 1e-11);
}

#[test]
fn nominal_process_at_unit_weight() {
    let j = JumpMeasure::new(0.3, 0.8).unwrap();
    let (r, b) = (1.7, 2.5);
    let s = nominal_stats(r, b, &j, 1.0).unwrap();
    let m1 = 0.3 / 0.8;
    let m2 = 2.0 * 0.3 / 0.64;
    assert_relative_eq!(s.mean, b / (r * (1.0 - m1)), max_relative = 1e-15);
    assert_relative_eq!(s.variance, m2 * b / (2.0 * r * (1.0 - m1).powi(2)), max_relative = 1e-15);
    assert_relative_eq!(s.acf(2.0), (-r * (1.0 - m1) * 2.0f64).exp(), max_relative = 1e-14);
    assert_relative_eq!(s.skewness, skewness_oracle(b, 1.0, 0.3, 0.8, 1.0 / r), max_relative = 1e-13);
}

#[test]
fn skewness_forms_agree_without_self_excitation() {
    let p = gamma_params(ModelKind::MeanField, 1.0, 0.0, 0.25, 0.5, 3.0, 1.0);
    assert_relative_eq!(
        superposed_skewness_mf(&p).unwrap(),
        superposed_skewness_cumulant(&p).unwrap(),
        max_relative = 1e-14
    );
    let q = p.with_kind(ModelKind::MeanField, 1.0).unwrap();
    assert!(superposed_skewness_cumulant(&q).unwrap() > superposed_skewness_mf(&q).unwrap());
}

/// `∫₀^T ρ(τ) dτ` by Simpson's rule in `u = ln τ`.
fn acf_integral(p: &ModelParams, horizon: f64) -> f64 {
    let (lo, hi) = (1e-6f64.ln(), horizon.ln());
    let n = 4000;
    let h = (hi - lo) / n as f64;
    let f = |u: f64| superposed_acf(p, u.exp()).unwrap() * u.exp();
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1e-6 + s * h / 3.0
}

#[test]
fn long_memory_classification() {
    for shape in [1.3, 1.7, 2.0, 2.5, 3.0, 4.0] {
        let p = gamma_params(ModelKind::MeanField, 1.0, 0.5, 0.25, 0.5, shape, 1.0);
        let [a, b, c] = [1e2, 1e4, 1e6].map(|t| acf_integral(&p, t));
        let (early, late) = (b - a, c - b);
        if shape <= 2.0 {
            assert!(late >= early * 0.99, "alpha={shape}: {early} then {late}");
            assert_eq!(hurst_exponent(shape).unwrap().map(|h| h >= 0.5), Some(true));
        } else {
            assert!(late < 0.5 * early, "alpha={shape}: {early} then {late}");
        }
    }
}

fn kinds() -> impl Strategy<Value = (ModelKind, f64)> {
    prop_oneof![
        Just((ModelKind::Previous, 1.0)),
        (0.0f64..=1.0).prop_map(|w| (ModelKind::MeanField, w)),
    ]
}

proptest! {
    #[test]
    fn mean_shared_and_variance_ordered(
        b in 0.01f64..100.0,
        w in 0.0f64..1.0,
        m1 in 0.01f64..0.99,
        lambda in 1e-3f64..10.0,
        shape in 1.05f64..20.0,
        scale in 0.01f64..100.0,
    ) {
        let prev = gamma_params(ModelKind::Previous, b, 1.0, m1 * lambda, lambda, shape, scale);
        let mf = prev.with_kind(ModelKind::MeanField, w).unwrap();
        let ag = prev.with_kind(ModelKind::Aggregation, w).unwrap();
        prop_assert_eq!(superposed_mean(&prev), superposed_mean(&mf));
        prop_assert_eq!(superposed_mean(&prev), superposed_mean(&ag));
        let (vp, vm) = (superposed_variance(&prev).unwrap(), superposed_variance(&mf).unwrap());
        prop_assert!(vm <= vp);
        prop_assert!((vm / vp - (1.0 - m1) / (1.0 - w * m1)).abs() < 1e-12);
        if w < 1.0 - 1e-9 {
            prop_assert!(vm < vp);
        }
    }

    #[test]
    fn gamma_acf_closed_form(
        (kind, w) in kinds(),
        m1 in 0.01f64..0.99,
        shape in 1.05f64..20.0,
        scale in 0.01f64..100.0,
    ) {
        let p = gamma_params(kind, 1.0, w, m1, 1.0, shape, scale);
        let bt = scale * (1.0 - w * m1);
        for lag in [0.0, 0.5, 1.0, 5.0, 20.0] {
            let expected = (1.0 + bt * lag).powf(-(shape - 1.0));
            prop_assert!((superposed_acf(&p, lag).unwrap() - expected).abs() <= 1e-10 * expected.max(1e-300));
        }
    }

    #[test]
    fn dimensionless_outputs_survive_rescaling(
        (kind, w) in kinds(),
        b in 0.01f64..1e5,
        m1 in 0.01f64..0.99,
        lambda in 1e-6f64..10.0,
        shape in 1.05f64..20.0,
        scale in 0.01f64..100.0,
    ) {
        let p = gamma_params(kind, b, w, m1 * lambda, lambda, shape, scale);
        let nd = nondimensionalize(&p).unwrap();
        let q = &nd.params;
        prop_assert!((superposed_mean(q) - 1.0).abs() < 1e-12);
        // Equal up to the rounding of the two rescaled products.
        prop_assert!((q.jump().m1() - p.jump().m1()).abs() <= 4.0 * f64::EPSILON * p.jump().m1());
        prop_assert_eq!(q.weight(), p.weight());
        let cv = |p: &ModelParams| superposed_variance(p).unwrap().sqrt() / superposed_mean(p);
        prop_assert!((cv(q) - cv(&p)).abs() <= 1e-10 * cv(&p));
        let (sq, sp) = (superposed_skewness_mf(q).unwrap(), superposed_skewness_mf(&p).unwrap());
        prop_assert!((sq - sp).abs() <= 1e-10 * sp);
        // Lags scale with the time unit.
        prop_assert!((superposed_acf(q, 1.0).unwrap() - superposed_acf(&p, nd.time_scale).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn hurst_domain(shape in 1.0001f64..10.0) {
        match hurst_exponent(shape).unwrap() {
            Some(h) => {
                prop_assert!(shape < 3.0);
                prop_assert!(h > 0.0 && h < 1.0);
            }
            None => prop_assert!(shape >= 3.0),
        }
    }
}
