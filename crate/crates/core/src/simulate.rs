//! Monte Carlo simulation of the finite interacting system on a speed grid.
//!
//! Each component follows
//!
//! ```text
//! dY_i = (bπ_i - r_i Y_i) dt + jumps,
//! ```
//!
//! with jumps of size `Exp(λ)` arriving at total intensity `Λ = M₀ Σ_i rate_i`:
//!
//! | kind     | `rate_i`                                   |
//! |----------|--------------------------------------------|
//! | previous | `r_i Y_i`                                  |
//! | MF       | `w r_i Y_i + (1-w) π_i b/(1-M₁)`           |
//! | AG       | `w r_i Y_i + (1-w) π_i Σ_j r_j Y_j`        |
//!
//! Time advances in steps of `Δt`. Within a step every component decays
//! exactly toward its baseline `bπ_i/r_i`, after which at most one jump
//! occurs with probability `Λ·Δt`.
//!
//! Starting from the stationary mean each `Y_i` stays above its baseline, so
//! `Λ` can only fall between jumps. The intensity at the last jump therefore
//! dominates every later step until the next one, and the per-step Bernoulli
//! trials are drawn by skipping a geometric number of steps against that
//! bound and accepting with probability `Λ_k/Λ̄`. This gives the same law as
//! stepping one `Δt` at a time, at a cost proportional to the number of
//! jumps rather than the number of steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric};
use rayon::prelude::*;

use crate::closedform::{ModelKind, ModelParams};
use crate::error::{invalid, Error, Result};
use crate::measures::RGrid;

/// Jump probability per step above which first-order thinning bias is
/// worth a warning.
pub const STEP_WARNING: f64 = 0.1;

/// Burn-in, in units of `R/(1-M₁)`, used when none is configured.
pub const DEFAULT_BURN_IN: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Grid size used when a caller discretizes the mixture.
    pub grid_size: usize,
    pub dt: f64,
    /// Discarded warm-up time; `None` means `20·R/(1-M₁)`.
    pub burn_in: Option<f64>,
    /// Length of the recorded segment.
    pub horizon: f64,
    /// Spacing of recorded values; rounded to a whole number of steps.
    pub sample_interval: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grid_size: 512,
            dt: 5e-4,
            burn_in: None,
            horizon: 200.0,
            sample_interval: 0.1,
            replicates: 200,
            seed: 0x5eed,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(b) = self.burn_in {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("burn-in must be nonnegative, got {b}")));
            }
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be nonnegative, got {}", self.horizon)));
        }
        if !(self.sample_interval >= self.dt) {
            return Err(Error::Config(format!(
                "sample interval {} is shorter than dt {}",
                self.sample_interval, self.dt
            )));
        }
        if self.replicates == 0 {
            return Err(Error::Config("at least one replicate is required".into()));
        }
        if self.grid_size == 0 {
            return Err(Error::Config("grid size must be at least 1".into()));
        }
        Ok(())
    }

    fn steps(&self, duration: f64) -> u64 {
        (duration / self.dt).round() as u64
    }

    /// Recording spacing in steps.
    pub fn interval_steps(&self) -> u64 {
        self.steps(self.sample_interval).max(1)
    }

    /// Actual spacing of recorded values after rounding to whole steps.
    pub fn effective_interval(&self) -> f64 {
        self.interval_steps() as f64 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    /// Times measured from the end of burn-in.
    pub times: Vec<f64>,
    /// `Z = Σ_i Y_i` at each recorded time.
    pub values: Vec<f64>,
    pub seed: u64,
    pub replicate: u64,
    /// Jumps inside the recorded segment.
    pub jump_count: u64,
    /// Jumps including burn-in.
    pub total_jumps: u64,
    /// Largest dominating jump probability per step encountered.
    pub max_step_probability: f64,
}

impl SamplePath {
    pub fn step_warning(&self) -> bool {
        self.max_step_probability > STEP_WARNING
    }
}

struct System<'a> {
    kind: ModelKind,
    w: f64,
    m0: f64,
    mf_constant: f64,
    speeds: &'a [f64],
    weights: &'a [f64],
    baseline: Vec<f64>,
    /// `Y_i - baseline_i`, nonnegative throughout.
    excess: Vec<f64>,
    rates: Vec<f64>,
    /// Decay factors over `cached_steps` steps.
    cached: Vec<f64>,
    cached_steps: u64,
    /// Step index the state refers to.
    step: u64,
    dt: f64,
}

impl<'a> System<'a> {
    fn new(p: &ModelParams, grid: &'a RGrid, dt: f64, cached_steps: u64) -> Self {
        let b = p.source_rate();
        let m1 = p.jump().m1();
        let speeds = grid.speeds();
        let weights = grid.weights();
        let baseline: Vec<f64> = speeds.iter().zip(weights).map(|(r, pi)| b * pi / r).collect();
        let excess = baseline.iter().map(|y| y * m1 / (1.0 - m1)).collect();
        Self {
            kind: p.kind(),
            w: p.weight(),
            m0: p.jump().moment(0),
            mf_constant: b / (1.0 - m1),
            speeds,
            weights,
            baseline,
            excess,
            rates: vec![0.0; grid.len()],
            cached: speeds.iter().map(|r| (-r * cached_steps as f64 * dt).exp()).collect(),
            cached_steps,
            step: 0,
            dt,
        }
    }

    fn advance_to(&mut self, step: u64) {
        if step == self.step {
            return;
        }
        if step - self.step == self.cached_steps {
            for (d, q) in self.excess.iter_mut().zip(&self.cached) {
                *d *= q;
            }
        } else {
            let elapsed = (step - self.step) as f64 * self.dt;
            for (d, r) in self.excess.iter_mut().zip(self.speeds) {
                *d *= (-r * elapsed).exp();
            }
        }
        self.step = step;
    }

    fn total(&self) -> f64 {
        self.baseline.iter().sum::<f64>() + self.excess.iter().sum::<f64>()
    }

    /// Fills `rates` and returns `Λ`.
    fn intensity(&mut self) -> f64 {
        let mut own = 0.0;
        for i in 0..self.speeds.len() {
            let v = self.speeds[i] * (self.baseline[i] + self.excess[i]);
            self.rates[i] = v;
            own += v;
        }
        match self.kind {
            ModelKind::Previous => {}
            ModelKind::MeanField => {
                let shared = (1.0 - self.w) * self.mf_constant;
                for (rate, pi) in self.rates.iter_mut().zip(self.weights) {
                    *rate = self.w * *rate + shared * pi;
                }
            }
            ModelKind::Aggregation => {
                let shared = (1.0 - self.w) * own;
                for (rate, pi) in self.rates.iter_mut().zip(self.weights) {
                    *rate = self.w * *rate + shared * pi;
                }
            }
        }
        self.m0 * self.rates.iter().sum::<f64>()
    }

    fn pick(&self, total: f64, u: f64) -> usize {
        let target = u * total;
        let mut acc = 0.0;
        for (i, rate) in self.rates.iter().enumerate() {
            acc += rate;
            if acc > target {
                return i;
            }
        }
        self.rates.iter().rposition(|&r| r > 0.0).unwrap_or(0)
    }
}

fn rng_for(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

fn check_params(p: &ModelParams, grid: &RGrid) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("grid", "must contain at least one node"));
    }
    if !p.jump().is_subcritical() {
        return Err(Error::Nonstationary { m1: p.jump().m1() });
    }
    Ok(())
}

/// Burn-in actually used for `p` under `cfg`.
pub fn burn_in(p: &ModelParams, grid: &RGrid, cfg: &SimConfig) -> f64 {
    cfg.burn_in
        .unwrap_or_else(|| DEFAULT_BURN_IN * grid.inv_speed_mass() / (1.0 - p.jump().m1()))
}

/// Simulates one replicate. The random stream depends only on
/// `(cfg.seed, replicate)`.
pub fn simulate_path(p: &ModelParams, grid: &RGrid, cfg: &SimConfig, replicate: u64) -> Result<SamplePath> {
    cfg.validate()?;
    check_params(p, grid)?;
    let mut rng = rng_for(cfg.seed, replicate);
    let sizes = Exp::new(p.jump().rate()).map_err(|e| invalid("lambda", e.to_string()))?;
    let dt = cfg.dt;
    let burn_steps = cfg.steps(burn_in(p, grid, cfg));
    let every = cfg.interval_steps();
    let samples = cfg.steps(cfg.horizon) / every + 1;
    let last_step = burn_steps + (samples - 1) * every;

    let mut sys = System::new(p, grid, dt, every);
    let mut times = Vec::with_capacity(samples as usize);
    let mut values = Vec::with_capacity(samples as usize);
    let mut next_sample = 0u64;
    let mut jump_count = 0u64;
    let mut total_jumps = 0u64;
    let mut max_prob = 0.0_f64;

    let record_until = |sys: &mut System, limit: u64, times: &mut Vec<f64>, values: &mut Vec<f64>, next: &mut u64| {
        while *next < samples {
            let step = burn_steps + *next * every;
            if step > limit {
                break;
            }
            sys.advance_to(step);
            times.push((*next * every) as f64 * dt);
            values.push(sys.total());
            *next += 1;
        }
    };

    if burn_steps == 0 {
        record_until(&mut sys, 0, &mut times, &mut values, &mut next_sample);
    }
    let mut bound = sys.intensity();
    loop {
        let prob = bound * dt;
        max_prob = max_prob.max(prob);
        if prob > 1.0 {
            return Err(Error::StepTooLarge {
                probability: prob,
                time: sys.step as f64 * dt,
            });
        }
        let candidate = if prob > 0.0 {
            let skip = Geometric::new(prob)
                .map_err(|e| invalid("dt", e.to_string()))?
                .sample(&mut rng);
            sys.step.saturating_add(skip).saturating_add(1)
        } else {
            u64::MAX
        };
        if candidate > last_step {
            record_until(&mut sys, last_step, &mut times, &mut values, &mut next_sample);
            break;
        }
        // Values are recorded at the end of a step, after its jump.
        record_until(&mut sys, candidate - 1, &mut times, &mut values, &mut next_sample);
        sys.advance_to(candidate);
        let current = sys.intensity();
        if rng.gen::<f64>() * bound < current {
            let node = sys.pick(current / sys.m0, rng.gen());
            sys.excess[node] += sizes.sample(&mut rng);
            total_jumps += 1;
            if candidate > burn_steps {
                jump_count += 1;
            }
            bound = sys.intensity();
        } else {
            bound = current;
        }
        record_until(&mut sys, candidate, &mut times, &mut values, &mut next_sample);
    }

    Ok(SamplePath {
        times,
        values,
        seed: cfg.seed,
        replicate,
        jump_count,
        total_jumps,
        max_step_probability: max_prob,
    })
}

/// All replicates `0..cfg.replicates`, in replicate order.
pub fn simulate_ensemble(p: &ModelParams, grid: &RGrid, cfg: &SimConfig) -> Result<Vec<SamplePath>> {
    cfg.validate()?;
    (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|k| simulate_path(p, grid, cfg, k))
        .collect()
}

/// An estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// `|value - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target).abs() / self.se
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: Estimate,
    pub variance: Estimate,
    pub skewness: Estimate,
    /// Jumps per unit time in the recorded segment.
    pub jump_rate: Estimate,
    pub lags: Vec<f64>,
    pub acf: Vec<Estimate>,
    pub replicates: usize,
    pub max_step_probability: f64,
}

fn mean_and_se(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    Estimate {
        value: m,
        se: (var / n).sqrt(),
    }
}

/// Ensemble statistics over the recorded segments.
///
/// Each replicate contributes time averages of `Z`, `(Z-m)²`, `(Z-m)³` and
/// `(Z_t-m)(Z_{t+τ}-m)`, all centred at the grand mean `m`; the reported
/// values are ratios of replicate averages, and standard errors come from the
/// spread of the linearised per-replicate contributions.
pub fn ensemble_stats(p: &ModelParams, grid: &RGrid, cfg: &SimConfig, lags: &[f64]) -> Result<EnsembleStats> {
    if cfg.replicates < 2 {
        return Err(Error::Config("ensemble statistics need at least 2 replicates".into()));
    }
    cfg.validate()?;
    let paths = simulate_ensemble(p, grid, cfg)?;
    stats_from_paths(&paths, cfg.effective_interval(), lags)
}

/// Ensemble statistics of already simulated, equally spaced paths.
pub fn stats_from_paths(paths: &[SamplePath], interval: f64, lags: &[f64]) -> Result<EnsembleStats> {
    if paths.len() < 2 {
        return Err(Error::Config("ensemble statistics need at least 2 replicates".into()));
    }
    let len = paths.iter().map(|p| p.values.len()).min().unwrap_or(0);
    let horizon = (len.saturating_sub(1)) as f64 * interval;
    let mut offsets = Vec::with_capacity(lags.len());
    for &lag in lags {
        if !(lag >= 0.0) {
            return Err(Error::Config(format!("lags must be nonnegative, got {lag}")));
        }
        let k = (lag / interval).round();
        if (k * interval - lag).abs() > 1e-9 * lag.max(1.0) {
            return Err(Error::Config(format!(
                "lag {lag} is not a multiple of the sampling interval {interval}"
            )));
        }
        if lag >= horizon {
            return Err(Error::Config(format!("lag {lag} is not shorter than the horizon {horizon}")));
        }
        offsets.push(k as usize);
    }

    let reps = paths.len() as f64;
    let means: Vec<f64> = paths
        .iter()
        .map(|p| p.values[..len].iter().sum::<f64>() / len as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / reps;

    let central = |k: u32| -> Vec<f64> {
        paths
            .iter()
            .map(|p| p.values[..len].iter().map(|v| (v - grand).powi(k as i32)).sum::<f64>() / len as f64)
            .collect()
    };
    let c2 = central(2);
    let c3 = central(3);
    let var = c2.iter().sum::<f64>() / reps;
    let third = c3.iter().sum::<f64>() / reps;
    let skew = third / var.powf(1.5);
    let skew_terms: Vec<f64> = c2
        .iter()
        .zip(&c3)
        .map(|(v, t)| skew + t / var.powf(1.5) - 1.5 * skew * (v - var) / var)
        .collect();

    let acf = offsets
        .iter()
        .map(|&k| {
            let covs: Vec<f64> = paths
                .iter()
                .map(|p| {
                    let v = &p.values[..len];
                    (0..len - k).map(|t| (v[t] - grand) * (v[t + k] - grand)).sum::<f64>() / (len - k) as f64
                })
                .collect();
            let rho = covs.iter().sum::<f64>() / reps / var;
            let terms: Vec<f64> = covs
                .iter()
                .zip(&c2)
                .map(|(c, v)| rho + (c - rho * v) / var)
                .collect();
            Estimate {
                value: rho,
                se: mean_and_se(&terms).se,
            }
        })
        .collect();

    let rates: Vec<f64> = paths
        .iter()
        .map(|p| p.jump_count as f64 / horizon.max(f64::MIN_POSITIVE))
        .collect();

    Ok(EnsembleStats {
        mean: mean_and_se(&means),
        variance: Estimate {
            value: var,
            se: mean_and_se(&c2).se,
        },
        skewness: Estimate {
            value: skew,
            se: mean_and_se(&skew_terms).se,
        },
        jump_rate: mean_and_se(&rates),
        lags: lags.to_vec(),
        acf,
        replicates: paths.len(),
        max_step_probability: paths.iter().map(|p| p.max_step_probability).fold(0.0, f64::max),
    })
}

/// Pooled `E[e^{-θZ}]` over every recorded value, with its standard error
/// from replicate dispersion.
pub fn empirical_mgf(paths: &[SamplePath], theta: f64) -> Estimate {
    let per: Vec<f64> = paths
        .iter()
        .map(|p| p.values.iter().map(|z| (-theta * z).exp()).sum::<f64>() / p.values.len() as f64)
        .collect();
    mean_and_se(&per)
}
