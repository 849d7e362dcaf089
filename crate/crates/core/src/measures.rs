//! The two measures behind every superposed model: the jump-size Lévy measure
//! and the mixing measure over reversion speeds.
//!
//! Jump sizes follow the exponential family `ν(dz) = μ·λ·e^{-λz} dz`, so every
//! moment and the Laplace exponent are available in closed form. Reversion
//! speeds follow a Gamma law, a single atom, or a finite discrete law. The
//! inverse-speed mass `R = ∫ r⁻¹ π(dr)` controls the stationary mean and
//! variance, and the normalised kernel `ρ(τ) = R⁻¹ ∫ r⁻¹ e^{-rcτ} π(dr)`
//! is the autocorrelation of every model in this crate.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{invalid, Error, Result};

/// Exponential-density Lévy measure with total frequency `μ` and size rate `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJump", into = "RawJump")]
pub struct JumpMeasure {
    frequency: f64,
    rate: f64,
}

#[derive(Serialize, Deserialize)]
struct RawJump {
    mu: f64,
    lambda: f64,
}

impl TryFrom<RawJump> for JumpMeasure {
    type Error = Error;
    fn try_from(raw: RawJump) -> Result<Self> {
        JumpMeasure::new(raw.mu, raw.lambda)
    }
}

impl From<JumpMeasure> for RawJump {
    fn from(j: JumpMeasure) -> Self {
        RawJump {
            mu: j.frequency,
            lambda: j.rate,
        }
    }
}

impl JumpMeasure {
    /// A zero frequency is accepted and describes a process without jumps.
    pub fn new(frequency: f64, rate: f64) -> Result<Self> {
        if !(frequency.is_finite() && frequency >= 0.0) {
            return Err(invalid("mu", format!("must be finite and nonnegative, got {frequency}")));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(invalid("lambda", format!("must be finite and positive, got {rate}")));
        }
        Ok(Self { frequency, rate })
    }

    /// Jump frequency `μ`.
    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    /// Reciprocal mean jump size `λ`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// `M_k = ∫ zᵏ ν(dz) = μ·k!/λᵏ`, built by the recursion `M_{k+1} = M_k·(k+1)/λ`.
    pub fn moment(&self, k: u32) -> f64 {
        (0..k).fold(self.frequency, |m, j| m * f64::from(j + 1) / self.rate)
    }

    /// Self-excitedness `M₁ = μ/λ`.
    pub fn m1(&self) -> f64 {
        self.moment(1)
    }

    /// True when `M₁ < 1`, the condition for a stationary process.
    pub fn is_subcritical(&self) -> bool {
        self.m1() < 1.0
    }

    /// `∫ (1 - e^{-xz}) ν(dz) = μx/(λ + x)`.
    pub fn laplace_exponent(&self, x: f64) -> f64 {
        self.frequency * x / (self.rate + x)
    }

    /// Same measure after rescaling the jump-size unit by `factor`
    /// (`z → z/factor`): both `μ` and `λ` are multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.frequency * factor, self.rate * factor)
    }
}

/// One atom of a discrete reversion-speed law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedNode {
    pub speed: f64,
    pub weight: f64,
}

/// Probability law of the reversion speed `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture", into = "RawMixture")]
pub enum ReversionMixture {
    /// Density proportional to `r^{shape-1} e^{-r/scale}`.
    Gamma { shape: f64, scale: f64 },
    /// Point mass at `speed`.
    Dirac { speed: f64 },
    /// Finite law with strictly increasing speeds and weights summing to one.
    Discrete(RGrid),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum RawMixture {
    Gamma {
        #[serde(alias = "alpha")]
        shape: f64,
        #[serde(alias = "beta")]
        scale: f64,
    },
    Dirac {
        #[serde(alias = "r0")]
        speed: f64,
    },
    Discrete {
        nodes: Vec<SpeedNode>,
    },
}

impl TryFrom<RawMixture> for ReversionMixture {
    type Error = Error;
    fn try_from(raw: RawMixture) -> Result<Self> {
        match raw {
            RawMixture::Gamma { shape, scale } => Self::gamma(shape, scale),
            RawMixture::Dirac { speed } => Self::dirac(speed),
            RawMixture::Discrete { nodes } => Self::discrete(
                nodes.iter().map(|n| n.speed).collect(),
                nodes.iter().map(|n| n.weight).collect(),
            ),
        }
    }
}

impl From<ReversionMixture> for RawMixture {
    fn from(m: ReversionMixture) -> Self {
        match m {
            ReversionMixture::Gamma { shape, scale } => RawMixture::Gamma { shape, scale },
            ReversionMixture::Dirac { speed } => RawMixture::Dirac { speed },
            ReversionMixture::Discrete(grid) => RawMixture::Discrete {
                nodes: grid
                    .speeds()
                    .iter()
                    .zip(grid.weights())
                    .map(|(&speed, &weight)| SpeedNode { speed, weight })
                    .collect(),
            },
        }
    }
}

impl ReversionMixture {
    /// Gamma law. Shapes at or below one are accepted here but have an
    /// infinite inverse-speed mass, which [`Self::inv_speed_mass`] reports.
    pub fn gamma(shape: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0) {
            return Err(invalid("shape", format!("must be finite and positive, got {shape}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid("scale", format!("must be finite and positive, got {scale}")));
        }
        Ok(Self::Gamma { shape, scale })
    }

    pub fn dirac(speed: f64) -> Result<Self> {
        if !(speed.is_finite() && speed > 0.0) {
            return Err(invalid("speed", format!("must be finite and positive, got {speed}")));
        }
        Ok(Self::Dirac { speed })
    }

    pub fn discrete(speeds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        RGrid::new(speeds, weights).map(Self::Discrete)
    }

    /// `R = ∫ r⁻¹ π(dr)`.
    pub fn inv_speed_mass(&self) -> Result<f64> {
        match *self {
            Self::Gamma { shape, scale } => {
                if shape <= 1.0 {
                    Err(Error::DivergentMass { shape })
                } else {
                    Ok(1.0 / (scale * (shape - 1.0)))
                }
            }
            Self::Dirac { speed } => Ok(1.0 / speed),
            Self::Discrete(ref grid) => Ok(grid.inv_speed_mass()),
        }
    }

    /// Normalised kernel `R⁻¹ ∫ r⁻¹ e^{-r·decay·lag} π(dr)`.
    pub fn acf_kernel(&self, decay: f64, lag: f64) -> Result<f64> {
        if !(decay > 0.0) || !(lag >= 0.0) {
            return Err(invalid(
                "acf_kernel",
                format!("decay must be positive and lag nonnegative, got ({decay}, {lag})"),
            ));
        }
        match *self {
            Self::Gamma { shape, scale } => {
                if shape <= 1.0 {
                    return Err(Error::DivergentMass { shape });
                }
                Ok((1.0 + scale * decay * lag).powf(-(shape - 1.0)))
            }
            Self::Dirac { speed } => Ok((-speed * decay * lag).exp()),
            Self::Discrete(ref grid) => Ok(grid.acf_kernel(decay, lag)),
        }
    }

    /// Equal-probability discretisation into `n` bins.
    ///
    /// Bin edges are the `k/n` quantiles. Each node sits at the harmonic
    /// conditional mean of its bin, `(1/n) / E[r⁻¹; bin]`, so the grid keeps
    /// the inverse-speed mass `R` of the continuous law exactly. A Dirac law
    /// yields its single atom and a discrete law is returned unchanged.
    pub fn discretize(&self, n: usize) -> Result<RGrid> {
        if n == 0 {
            return Err(invalid("n", "grid size must be at least 1"));
        }
        match *self {
            Self::Dirac { speed } => RGrid::new(vec![speed], vec![1.0]),
            Self::Discrete(ref grid) => Ok(grid.clone()),
            Self::Gamma { shape, scale } => {
                if shape <= 1.0 {
                    return Err(Error::DivergentMass { shape });
                }
                discretize_gamma(shape, scale, n)
            }
        }
    }

    /// Mean reversion speed, used for default time scales.
    pub fn mean_speed(&self) -> f64 {
        match *self {
            Self::Gamma { shape, scale } => shape * scale,
            Self::Dirac { speed } => speed,
            Self::Discrete(ref grid) => grid
                .speeds()
                .iter()
                .zip(grid.weights())
                .map(|(r, p)| r * p)
                .sum(),
        }
    }
}

const QUANTILE_TOL: f64 = 1e-12;

/// Regularized lower incomplete gamma and its complement, evaluated on the side
/// with less cancellation.
fn gamma_cdf_pair(shape: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    if x < shape {
        let p = gamma_lr(shape, x);
        (p, 1.0 - p)
    } else {
        let q = gamma_ur(shape, x);
        (1.0 - q, q)
    }
}

/// Mass of `(lo, hi]` under the standard Gamma(shape) law.
fn gamma_mass(shape: f64, lo: f64, hi: f64) -> f64 {
    let (p_lo, q_lo) = gamma_cdf_pair(shape, lo);
    let (p_hi, q_hi) = gamma_cdf_pair(shape, hi);
    if p_lo > 0.5 {
        q_lo - q_hi
    } else {
        p_hi - p_lo
    }
}

/// Standardised quantile `x` with `P(shape, x) = target`, by bracketing and bisection.
fn gamma_quantile(shape: f64, target: f64, bin: usize) -> Result<f64> {
    let mut lo = 0.0_f64;
    let mut hi = shape.max(1.0);
    let mut guard = 0;
    while gamma_cdf_pair(shape, hi).0 < target {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 200 || !hi.is_finite() {
            return Err(Error::Quantile {
                bin,
                reason: format!("could not bracket quantile {target}"),
            });
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let p = gamma_cdf_pair(shape, mid).0;
        if !p.is_finite() {
            return Err(Error::Quantile {
                bin,
                reason: format!("incomplete gamma returned {p} at {mid}"),
            });
        }
        if (p - target).abs() <= QUANTILE_TOL {
            return Ok(mid);
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            return Ok(0.5 * (lo + hi));
        }
    }
    Ok(0.5 * (lo + hi))
}

fn discretize_gamma(shape: f64, scale: f64, n: usize) -> Result<RGrid> {
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(0.0);
    for k in 1..n {
        edges.push(gamma_quantile(shape, k as f64 / n as f64, k)?);
    }
    edges.push(f64::INFINITY);

    let weight = 1.0 / n as f64;
    let inv_mass = 1.0 / (scale * (shape - 1.0));
    let mut speeds = Vec::with_capacity(n);
    for (bin, pair) in edges.windows(2).enumerate() {
        // E[r⁻¹; lo < r ≤ hi] = R · (P(α-1, hi) - P(α-1, lo)) in standardised units.
        let inv_moment = inv_mass * gamma_mass(shape - 1.0, pair[0], pair[1]);
        if !(inv_moment.is_finite() && inv_moment > 0.0) {
            return Err(Error::Quantile {
                bin,
                reason: format!("inverse conditional moment {inv_moment} is not positive"),
            });
        }
        speeds.push(weight / inv_moment);
    }
    // Ties can only appear through rounding at extreme shapes; nudge to keep order strict.
    for i in 1..speeds.len() {
        if speeds[i] <= speeds[i - 1] {
            speeds[i] = speeds[i - 1] * (1.0 + 4.0 * f64::EPSILON);
        }
    }
    RGrid::new(speeds, vec![weight; n])
}

/// Finite reversion-speed law `Σ π_i δ_{r_i}` shared by the Riccati solver and the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RGrid {
    speeds: Vec<f64>,
    weights: Vec<f64>,
}

impl RGrid {
    pub fn new(speeds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if speeds.is_empty() {
            return Err(invalid("nodes", "a grid needs at least one node"));
        }
        if speeds.len() != weights.len() {
            return Err(invalid(
                "nodes",
                format!("{} speeds but {} weights", speeds.len(), weights.len()),
            ));
        }
        if let Some(r) = speeds.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(invalid("speed", format!("must be finite and positive, got {r}")));
        }
        if speeds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("speed", "speeds must be strictly increasing"));
        }
        if let Some(p) = weights.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(invalid("weight", format!("must be finite and positive, got {p}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weight", format!("weights sum to {total}, not 1")));
        }
        Ok(Self { speeds, weights })
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `R⁽ⁿ⁾ = Σ π_i / r_i`.
    pub fn inv_speed_mass(&self) -> f64 {
        self.speeds
            .iter()
            .zip(&self.weights)
            .map(|(r, p)| p / r)
            .sum()
    }

    pub fn acf_kernel(&self, decay: f64, lag: f64) -> f64 {
        let num: f64 = self
            .speeds
            .iter()
            .zip(&self.weights)
            .map(|(r, p)| p / r * (-r * decay * lag).exp())
            .sum();
        num / self.inv_speed_mass()
    }
}
