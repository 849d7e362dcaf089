//! Parameter identification from a count series.
//!
//! 1. `(α, β̃)` by least squares between the sample autocorrelation and
//!    `(1 + β̃τ)^{-(α-1)}` at lags `1..=14`.
//! 2. `(λ, b, μ)` by matching the mean, variance and jump rate exactly;
//!    `β = β̃/(1 - wM₁)`.
//! 3. Optionally `w`, by matching the skewness.

use serde::Serialize;

use crate::closedform::{hurst_exponent, RawMoments};
use crate::empirical::{CountSeries, SummaryStats};
use crate::error::{invalid, Error, Result};

/// Lags used by the autocorrelation fit unless overridden.
pub const DEFAULT_LAGS: usize = 14;

/// Gradient norm (in log-parameters) at which a local fit is converged.
pub const GRADIENT_TOL: f64 = 1e-10;

/// Looser stationarity accepted for end points reached at the iteration cap.
const STATIONARY_TOL: f64 = 1e-6;

/// Box on `ln(α-1)` and `ln β̃`. An exponential autocorrelation is the limit
/// `α → ∞`, which the fit reaches as `α - 1 = 10⁶`.
const LOG_BOUNDS: [(f64, f64); 2] = [(-13.815510557964274, 13.815510557964274), (-23.025850929940457, 23.025850929940457)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcfFit {
    pub alpha: f64,
    pub beta_tilde: f64,
    /// Sum of squared residuals.
    pub objective: f64,
    pub gradient_norm: f64,
    /// Whether the optimum sits on the parameter box.
    pub at_bound: bool,
}

/// Gamma-mixture autocorrelation `(1 + β̃τ)^{-(α-1)}`.
pub fn gamma_acf(alpha: f64, beta_tilde: f64, lag: f64) -> f64 {
    (1.0 + beta_tilde * lag).powf(-(alpha - 1.0))
}

struct Lsq<'a> {
    lags: &'a [f64],
    values: &'a [f64],
}

impl Lsq<'_> {
    fn objective(&self, x: [f64; 2]) -> f64 {
        let (k, g) = (x[0].exp(), x[1].exp());
        self.lags
            .iter()
            .zip(self.values)
            .map(|(&t, &v)| {
                let r = (-k * (g * t).ln_1p()).exp() - v;
                r * r
            })
            .sum()
    }

    /// Objective, gradient `Jᵀr` and Gauss-Newton matrix `JᵀJ`.
    fn linearize(&self, x: [f64; 2]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let (k, g) = (x[0].exp(), x[1].exp());
        let mut obj = 0.0;
        let mut grad = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for (&t, &v) in self.lags.iter().zip(self.values) {
            let l = (g * t).ln_1p();
            let f = (-k * l).exp();
            let r = f - v;
            let j = [-k * l * f, -k * g * t / (1.0 + g * t) * f];
            obj += r * r;
            for a in 0..2 {
                grad[a] += j[a] * r;
                for b in 0..2 {
                    h[a][b] += j[a] * j[b];
                }
            }
        }
        (obj, grad, h)
    }
}

/// Distance from a bound, in log units, at which a coordinate counts as
/// resting on it. Valleys that run into the box are only approached
/// asymptotically by damped steps.
const BOUND_MARGIN: f64 = 1e-8;

fn projected_norm(x: [f64; 2], grad: [f64; 2]) -> f64 {
    let mut s = 0.0;
    for i in 0..2 {
        let (lo, hi) = LOG_BOUNDS[i];
        let blocked = (x[i] <= lo + BOUND_MARGIN && grad[i] > 0.0) || (x[i] >= hi - BOUND_MARGIN && grad[i] < 0.0);
        if !blocked {
            s += grad[i] * grad[i];
        }
    }
    s.sqrt()
}

fn clamp(x: [f64; 2]) -> [f64; 2] {
    [
        x[0].clamp(LOG_BOUNDS[0].0, LOG_BOUNDS[0].1),
        x[1].clamp(LOG_BOUNDS[1].0, LOG_BOUNDS[1].1),
    ]
}

/// Levenberg-Marquardt from `x`; returns the end point, objective,
/// projected gradient norm and whether the gradient test was met.
fn levenberg_marquardt(problem: &Lsq, start: [f64; 2]) -> ([f64; 2], f64, f64, bool) {
    let mut x = clamp(start);
    let mut damping = 1e-3;
    let (mut obj, mut grad, mut h) = problem.linearize(x);
    for _ in 0..5000 {
        let gnorm = projected_norm(x, grad);
        if gnorm < GRADIENT_TOL {
            return (x, obj, gnorm, true);
        }
        let mut improved = false;
        while damping < 1e16 {
            let a = [
                [h[0][0] * (1.0 + damping) + 1e-300, h[0][1]],
                [h[1][0], h[1][1] * (1.0 + damping) + 1e-300],
            ];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            if det.is_finite() && det != 0.0 {
                let step = [
                    -(a[1][1] * grad[0] - a[0][1] * grad[1]) / det,
                    -(a[0][0] * grad[1] - a[1][0] * grad[0]) / det,
                ];
                let trial = clamp([x[0] + step[0], x[1] + step[1]]);
                let trial_obj = problem.objective(trial);
                if trial_obj < obj || (trial_obj == obj && trial == x) {
                    let moved = trial != x;
                    x = trial;
                    (obj, grad, h) = problem.linearize(x);
                    damping = (damping / 3.0).max(1e-12);
                    improved = moved;
                    break;
                }
            }
            damping *= 4.0;
        }
        if !improved {
            let gnorm = projected_norm(x, grad);
            // No descent step exists at working precision: a minimum up to
            // rounding. Along valleys that run into the box the gradient
            // noise sits just above the nominal tolerance, so allow it a
            // factor of 100 here.
            let ok = gnorm < 100.0 * GRADIENT_TOL || obj < 1e-28;
            return (x, obj, gnorm, ok);
        }
    }
    let gnorm = projected_norm(x, grad);
    (x, obj, gnorm, gnorm < GRADIENT_TOL)
}

/// Multi-start starting points in `(α-1, β̃)`.
pub const STARTS: [(f64, f64); 9] = [
    (0.1, 0.01),
    (0.1, 1.0),
    (0.1, 100.0),
    (1.0, 0.01),
    (1.0, 1.0),
    (1.0, 100.0),
    (10.0, 0.01),
    (10.0, 1.0),
    (10.0, 100.0),
];

/// Objective of the autocorrelation fit at `(α, β̃)`.
pub fn acf_objective(points: &[(f64, f64)], alpha: f64, beta_tilde: f64) -> f64 {
    points
        .iter()
        .map(|&(t, v)| (gamma_acf(alpha, beta_tilde, t) - v).powi(2))
        .sum()
}

/// Least-squares fit of `(1 + β̃τ)^{-(α-1)}` to `(lag, value)` pairs.
pub fn fit_acf(points: &[(f64, f64)]) -> Result<AcfFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(t, v)| t.is_finite() && *t > 0.0 && v.is_finite())
        .collect();
    if usable.len() < 3 {
        return Err(Error::FitFailure(format!(
            "need at least 3 finite positive lags, got {}",
            usable.len()
        )));
    }
    if usable.iter().all(|&(_, v)| v >= 1.0 - 1e-12) {
        return Err(Error::FitFailure("autocorrelation does not decay".into()));
    }
    let lags: Vec<f64> = usable.iter().map(|p| p.0).collect();
    let values: Vec<f64> = usable.iter().map(|p| p.1).collect();
    let problem = Lsq {
        lags: &lags,
        values: &values,
    };

    let mut best: Option<([f64; 2], f64, f64)> = None;
    let mut smallest_gradient = f64::INFINITY;
    for (k, g) in STARTS {
        let (x, obj, gnorm, ok) = levenberg_marquardt(&problem, [k.ln(), g.ln()]);
        // Valleys that end on the box are crawled along slowly; an end point
        // that is stationary to a looser tolerance still competes, and its
        // gradient norm is reported.
        if !ok && gnorm >= STATIONARY_TOL {
            smallest_gradient = smallest_gradient.min(gnorm);
            continue;
        }
        if best.map_or(true, |(_, b, _)| obj < b) {
            best = Some((x, obj, gnorm));
        }
    }
    let (x, _, gradient_norm) = best.ok_or_else(|| {
        Error::FitFailure(format!(
            "no start converged (smallest gradient norm above tolerance: {smallest_gradient:.3e})"
        ))
    })?;
    let alpha = 1.0 + x[0].exp();
    let beta_tilde = x[1].exp();
    if x[0].exp() * beta_tilde < 1e-10 {
        return Err(Error::FitFailure("fitted autocorrelation does not decay".into()));
    }
    // Evaluated at the reported parameters: near the α cap, rounding of
    // `1 + e^x` is amplified by the exponent.
    let objective = acf_objective(&usable, alpha, beta_tilde);
    let at_bound = (0..2).any(|i| x[i] <= LOG_BOUNDS[i].0 + BOUND_MARGIN || x[i] >= LOG_BOUNDS[i].1 - BOUND_MARGIN);
    Ok(AcfFit {
        alpha,
        beta_tilde,
        objective,
        gradient_norm,
        at_bound,
    })
}

/// Jump measure, source rate and reversion scale matched to the moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentMatch {
    pub lambda: f64,
    pub b: f64,
    pub mu: f64,
    pub beta: f64,
    pub m1: f64,
    pub negative_b: bool,
}

fn check_inputs(stats: &SummaryStats, alpha: f64, beta_tilde: f64) -> Result<()> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(invalid("alpha", format!("must exceed 1, got {alpha}")));
    }
    if !(beta_tilde > 0.0 && beta_tilde.is_finite()) {
        return Err(invalid("beta_tilde", format!("must be positive, got {beta_tilde}")));
    }
    for (name, v) in [("Ave", stats.ave), ("Var", stats.var), ("Jmp", stats.jmp)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid("stats", format!("{name} must be finite and positive, got {v}")));
        }
    }
    Ok(())
}

/// Solves for `(λ, b, μ, β)` so that the model reproduces Ave, Var and Jmp.
///
/// A nonpositive `b` is reported through `negative_b` rather than as an
/// error; the remaining fields then follow the same formulas.
pub fn moment_match(stats: &SummaryStats, alpha: f64, beta_tilde: f64, w: f64) -> Result<MomentMatch> {
    check_inputs(stats, alpha, beta_tilde)?;
    if !(0.0..=1.0).contains(&w) {
        return Err(invalid("w", format!("must lie in [0, 1], got {w}")));
    }
    let gamma = beta_tilde * (alpha - 1.0);
    let lambda = (stats.jmp / (gamma * stats.var)).sqrt();
    let b = stats.ave * gamma - (1.0 - w) * stats.jmp / lambda;
    let mu = stats.jmp * lambda / (stats.jmp + b * lambda);
    let m1 = mu / lambda;
    Ok(MomentMatch {
        lambda,
        b,
        mu,
        beta: beta_tilde / (1.0 - w * m1),
        m1,
        negative_b: b <= 0.0,
    })
}

/// Smallest `w` giving `b > 0`: `max{0, 1 - √(β̃(α-1)/(Jmp·CV²))}`.
pub fn realizability_bound(stats: &SummaryStats, alpha: f64, beta_tilde: f64) -> f64 {
    let ratio = beta_tilde * (alpha - 1.0) / (stats.jmp * stats.cv * stats.cv);
    (1.0 - ratio.sqrt()).max(0.0)
}

/// Identified parameters and diagnostics, serialized with the column names
/// of the published parameter tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub alpha: f64,
    pub beta_tilde: f64,
    pub beta: f64,
    #[serde(rename = "H")]
    pub hurst: Option<f64>,
    pub b: f64,
    pub lambda: f64,
    pub mu: f64,
    pub w: f64,
    #[serde(rename = "M1")]
    pub m1: f64,
    pub realizable_w_lower_bound: f64,
    pub skewness_theory: f64,
    pub skewness_relative_error: f64,
    pub negative_b: bool,
    pub long_memory: bool,
}

fn theoretical_skewness(m: &MomentMatch, alpha: f64, w: f64) -> f64 {
    let raw = RawMoments {
        b: m.b,
        w,
        m0: m.mu,
        m1: m.mu / m.lambda,
        m2: 2.0 * m.mu / m.lambda.powi(2),
        m3: 6.0 * m.mu / m.lambda.powi(3),
        inv_speed: 1.0 / (m.beta * (alpha - 1.0)),
    };
    raw.skewness()
}

fn skewness_error(theory: f64, empirical: f64) -> f64 {
    let e = (theory - empirical).abs();
    let e = if empirical != 0.0 { e / empirical.abs() } else { e };
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

impl FitResult {
    /// Moment matching at `(α, β̃, w)` with all diagnostics filled in.
    pub fn at(stats: &SummaryStats, alpha: f64, beta_tilde: f64, w: f64) -> Result<Self> {
        let m = moment_match(stats, alpha, beta_tilde, w)?;
        let skewness_theory = theoretical_skewness(&m, alpha, w);
        Ok(Self {
            alpha,
            beta_tilde,
            beta: m.beta,
            hurst: hurst_exponent(alpha)?,
            b: m.b,
            lambda: m.lambda,
            mu: m.mu,
            w,
            m1: m.m1,
            realizable_w_lower_bound: realizability_bound(stats, alpha, beta_tilde),
            skewness_theory,
            skewness_relative_error: skewness_error(skewness_theory, stats.skw),
            negative_b: m.negative_b,
            long_memory: alpha <= 2.0,
        })
    }
}

/// Grid spacing of the `w` search before refinement.
pub const W_GRID_STEP: f64 = 1e-3;

/// `w ∈ [0, 1]` minimizing the relative skewness error, by a grid of step
/// 10⁻³ followed by golden-section refinement around the best grid point.
pub fn fit_w(stats: &SummaryStats, alpha: f64, beta_tilde: f64) -> Result<FitResult> {
    check_inputs(stats, alpha, beta_tilde)?;
    if !stats.skw.is_finite() {
        return Err(invalid("stats", "Skw must be finite"));
    }
    let err = |w: f64| -> f64 {
        moment_match(stats, alpha, beta_tilde, w)
            .map(|m| skewness_error(theoretical_skewness(&m, alpha, w), stats.skw))
            .unwrap_or(f64::INFINITY)
    };
    let steps = (1.0 / W_GRID_STEP).round() as usize;
    let (mut best_w, mut best_e) = (1.0, err(1.0));
    for i in 0..steps {
        let w = i as f64 * W_GRID_STEP;
        let e = err(w);
        if e < best_e {
            best_w = w;
            best_e = e;
        }
    }
    // Golden section on the bracketing cells.
    let (mut lo, mut hi) = ((best_w - W_GRID_STEP).max(0.0), (best_w + W_GRID_STEP).min(1.0));
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let (mut ec, mut ed) = (err(c), err(d));
    for _ in 0..80 {
        if ec < ed {
            hi = d;
            d = c;
            ed = ec;
            c = hi - ratio * (hi - lo);
            ec = err(c);
        } else {
            lo = c;
            c = d;
            ec = ed;
            d = lo + ratio * (hi - lo);
            ed = err(d);
        }
    }
    // Refinement must beat the grid by more than rounding, so exact ties
    // stay on grid points such as w = 1.
    for (w, e) in [(c, ec), (d, ed)] {
        if e < best_e - 1e-14 {
            best_w = w;
            best_e = e;
        }
    }
    FitResult::at(stats, alpha, beta_tilde, best_w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaFit {
    pub kappa: f64,
    /// `1 - SS_res/Σ Skw²`, the usual measure for a line through the origin.
    pub r_squared: f64,
}

/// Least squares `Skw = κ·CV` through the origin.
pub fn kappa_regression(datasets: &[SummaryStats]) -> Result<KappaFit> {
    if datasets.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 datasets, got {}",
            datasets.len()
        )));
    }
    let sxx: f64 = datasets.iter().map(|s| s.cv * s.cv).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("all coefficients of variation are zero".into()));
    }
    let sxy: f64 = datasets.iter().map(|s| s.cv * s.skw).sum();
    let syy: f64 = datasets.iter().map(|s| s.skw * s.skw).sum();
    let kappa = sxy / sxx;
    let ss_res: f64 = datasets.iter().map(|s| (s.skw - kappa * s.cv).powi(2)).sum();
    Ok(KappaFit {
        kappa,
        r_squared: 1.0 - ss_res / syy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaRoot {
    pub m1: f64,
    /// `M₁ < 1`.
    pub feasible: bool,
}

/// Positive root of `w²M₁² + (κ/2)M₁ - 1 = 0`; `M₁ = 2/κ` when `w = 0`.
pub fn m1_from_kappa(w: f64, kappa: f64) -> Result<KappaRoot> {
    if !(0.0..=1.0).contains(&w) {
        return Err(invalid("w", format!("must lie in [0, 1], got {w}")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(invalid("kappa", format!("must be positive, got {kappa}")));
    }
    let m1 = if w == 0.0 {
        2.0 / kappa
    } else {
        // Rationalized form of (-κ + √(κ² + 16w²))/(4w²), free of cancellation.
        4.0 / (kappa + (kappa * kappa + 16.0 * w * w).sqrt())
    };
    Ok(KappaRoot {
        m1,
        feasible: m1 < 1.0,
    })
}

/// How `w` is chosen in [`fit_series`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WMode {
    Fixed(f64),
    Fitted,
}

/// Output of the full pipeline on one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFit {
    pub stats: SummaryStats,
    pub acf: Vec<f64>,
    pub acf_fit: AcfFit,
    /// Fit with `w` fixed (1 unless another value was requested).
    pub fixed: FitResult,
    /// Fit with `w` chosen by skewness, when requested.
    pub fitted: Option<FitResult>,
}

/// Trim, summarize, fit the autocorrelation at lags `1..=max_lag`, then match
/// moments.
pub fn fit_series(series: &CountSeries, max_lag: usize, mode: WMode) -> Result<SeriesFit> {
    let trimmed = series.trim()?;
    let stats = trimmed.summary()?;
    let acf = trimmed.sample_acf(max_lag)?;
    let points: Vec<(f64, f64)> = acf.iter().enumerate().skip(1).map(|(k, &v)| (k as f64, v)).collect();
    let acf_fit = fit_acf(&points)?;
    let fixed_w = match mode {
        WMode::Fixed(w) => w,
        WMode::Fitted => 1.0,
    };
    let fixed = FitResult::at(&stats, acf_fit.alpha, acf_fit.beta_tilde, fixed_w)?;
    let fitted = match mode {
        WMode::Fitted => Some(fit_w(&stats, acf_fit.alpha, acf_fit.beta_tilde)?),
        WMode::Fixed(_) => None,
    };
    Ok(SeriesFit {
        stats,
        acf,
        acf_fit,
        fixed,
        fitted,
    })
}
