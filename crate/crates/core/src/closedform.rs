//! Exact stationary statistics of the nominal process and of the previous
//! (independent) and mean-field superpositions.
//!
//! All three superposed kinds share the mean `bR/(1-M₁)` and the jump rate
//! `M₀b/(1-M₁)`. Variance, autocorrelation and skewness have closed forms for
//! the previous and mean-field kinds only; the aggregation kind is handled by
//! [`crate::riccati`] and [`crate::simulate`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::{JumpMeasure, ReversionMixture};

/// Interaction structure between the superposed components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Independent components (`w = 1`).
    #[serde(rename = "previous", alias = "Previous")]
    Previous,
    /// Interaction through the expected weighted average.
    #[serde(rename = "mf", alias = "MF", alias = "mean_field")]
    MeanField,
    /// Interaction through the realised weighted average.
    #[serde(rename = "ag", alias = "AG", alias = "aggregation")]
    Aggregation,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Previous => "previous",
            ModelKind::MeanField => "mf",
            ModelKind::Aggregation => "ag",
        })
    }
}

/// Full specification of one superposed process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    kind: ModelKind,
    source_rate: f64,
    weight: f64,
    jump: JumpMeasure,
    mixture: ReversionMixture,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    kind: ModelKind,
    b: f64,
    #[serde(default = "one")]
    w: f64,
    jump: JumpMeasure,
    mixture: ReversionMixture,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(raw.kind, raw.b, raw.w, raw.jump, raw.mixture)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            kind: p.kind,
            b: p.source_rate,
            w: p.weight,
            jump: p.jump,
            mixture: p.mixture,
        }
    }
}

impl ModelParams {
    /// Validates `b > 0`, `w ∈ [0, 1]`, `M₁ < 1`, a finite `R`, and `w = 1`
    /// for the previous kind.
    pub fn new(
        kind: ModelKind,
        source_rate: f64,
        weight: f64,
        jump: JumpMeasure,
        mixture: ReversionMixture,
    ) -> Result<Self> {
        if !(source_rate.is_finite() && source_rate > 0.0) {
            return Err(invalid("b", format!("must be finite and positive, got {source_rate}")));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(invalid("w", format!("must lie in [0, 1], got {weight}")));
        }
        if kind == ModelKind::Previous && weight != 1.0 {
            return Err(invalid("w", format!("the previous model fixes w = 1, got {weight}")));
        }
        if !jump.is_subcritical() {
            return Err(Error::Nonstationary { m1: jump.m1() });
        }
        mixture.inv_speed_mass()?;
        Ok(Self {
            kind,
            source_rate,
            weight,
            jump,
            mixture,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Source rate `b`.
    pub fn source_rate(&self) -> f64 {
        self.source_rate
    }

    /// Self-excitation weight `w`.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn jump(&self) -> &JumpMeasure {
        &self.jump
    }

    pub fn mixture(&self) -> &ReversionMixture {
        &self.mixture
    }

    /// `R`; finite by construction.
    pub fn inv_speed_mass(&self) -> f64 {
        self.mixture
            .inv_speed_mass()
            .expect("validated at construction")
    }

    /// Copy with a different kind and weight, revalidated.
    pub fn with_kind(&self, kind: ModelKind, weight: f64) -> Result<Self> {
        Self::new(kind, self.source_rate, weight, self.jump, self.mixture.clone())
    }

    /// Copy with a different mixing law, revalidated.
    pub fn with_mixture(&self, mixture: ReversionMixture) -> Result<Self> {
        Self::new(self.kind, self.source_rate, self.weight, self.jump, mixture)
    }

    /// Decay multiplier `c` of the autocorrelation kernel: `1 - wM₁`.
    pub fn acf_decay(&self) -> f64 {
        1.0 - self.weight * self.jump.m1()
    }

    /// Characteristic time `R/(1-M₁)`.
    pub fn time_scale(&self) -> f64 {
        self.inv_speed_mass() / (1.0 - self.jump.m1())
    }
}

/// Stationary statistics of a single nominal process with reversion speed `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryStats {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub jump_rate: f64,
    /// Exponential decay rate `r(1-wM₁)` of the autocorrelation.
    pub acf_rate: f64,
}

impl StationaryStats {
    pub fn acf(&self, lag: f64) -> f64 {
        (-self.acf_rate * lag).exp()
    }
}

/// Moment formulas of the mean-field family evaluated without validation, so
/// that fitted parameter sets with a negative source rate (and hence
/// `M₁ > 1`) can still be reported.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RawMoments {
    pub b: f64,
    pub w: f64,
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    /// `R` for a superposition, `1/r` for a single nominal process.
    pub inv_speed: f64,
}

impl RawMoments {
    pub fn from_parts(b: f64, w: f64, jump: &JumpMeasure, inv_speed: f64) -> Self {
        Self {
            b,
            w,
            m0: jump.moment(0),
            m1: jump.moment(1),
            m2: jump.moment(2),
            m3: jump.moment(3),
            inv_speed,
        }
    }

    pub fn mean(&self) -> f64 {
        self.b * self.inv_speed / (1.0 - self.m1)
    }

    pub fn variance(&self) -> f64 {
        self.m2 * self.b * self.inv_speed / (2.0 * (1.0 - self.m1) * (1.0 - self.w * self.m1))
    }

    pub fn skewness(&self) -> f64 {
        let v = self.variance();
        v.powf(-1.5) * self.b / ((1.0 - self.m1) * (1.0 - self.w * self.m1))
            * (self.m3 / 3.0 + 0.5 * self.w * self.m2 * self.m2)
            * self.inv_speed
    }

    /// Third cumulant obtained by expanding the Riccati equation to third
    /// order in θ. It exceeds the published skewness numerator in the
    /// `M₂²` term by the factor `1/(1-wM₁)`.
    pub fn skewness_cumulant(&self) -> f64 {
        let v = self.variance();
        v.powf(-1.5) * self.b / ((1.0 - self.m1) * (1.0 - self.w * self.m1))
            * (self.m3 / 3.0 + 0.5 * self.w * self.m2 * self.m2 / (1.0 - self.w * self.m1))
            * self.inv_speed
    }

    pub fn jump_rate(&self) -> f64 {
        self.m0 * self.b / (1.0 - self.m1)
    }
}

/// Statistics of the nominal process `X(r, b)` under mean-field weight `w`;
/// `w = 1` gives the independent nominal process.
pub fn nominal_stats(speed: f64, source_rate: f64, jump: &JumpMeasure, weight: f64) -> Result<StationaryStats> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(invalid("r", format!("must be finite and positive, got {speed}")));
    }
    if !(source_rate > 0.0 && source_rate.is_finite()) {
        return Err(invalid("b", format!("must be finite and positive, got {source_rate}")));
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(invalid("w", format!("must lie in [0, 1], got {weight}")));
    }
    if !jump.is_subcritical() {
        return Err(Error::Nonstationary { m1: jump.m1() });
    }
    let raw = RawMoments::from_parts(source_rate, weight, jump, 1.0 / speed);
    Ok(StationaryStats {
        mean: raw.mean(),
        variance: raw.variance(),
        skewness: raw.skewness(),
        jump_rate: raw.jump_rate(),
        acf_rate: speed * (1.0 - weight * jump.m1()),
    })
}

fn raw(p: &ModelParams) -> RawMoments {
    RawMoments::from_parts(p.source_rate, p.weight, &p.jump, p.inv_speed_mass())
}

/// `E[Z] = bR/(1-M₁)`, shared by all kinds.
pub fn superposed_mean(p: &ModelParams) -> f64 {
    raw(p).mean()
}

/// Previous: `M₂bR/(2(1-M₁)²)`; mean-field: `M₂bR/(2(1-M₁)(1-wM₁))`.
pub fn superposed_variance(p: &ModelParams) -> Result<f64> {
    match p.kind {
        ModelKind::Aggregation => Err(Error::UnsupportedClosedForm {
            what: "variance",
            route: "riccati::ag_variance",
        }),
        _ => Ok(raw(p).variance()),
    }
}

/// `ρ(τ) = R⁻¹ ∫ r⁻¹ e^{-r(1-wM₁)τ} π(dr)`.
pub fn superposed_acf(p: &ModelParams, lag: f64) -> Result<f64> {
    match p.kind {
        ModelKind::Aggregation => Err(Error::UnsupportedClosedForm {
            what: "autocorrelation",
            route: "the Monte Carlo ensemble in simulate",
        }),
        _ => p.mixture.acf_kernel(p.acf_decay(), lag),
    }
}

/// `S = V^{-3/2} · b/((1-M₁)(1-wM₁)) · (M₃/3 + wM₂²/2) · R`.
pub fn superposed_skewness_mf(p: &ModelParams) -> Result<f64> {
    match p.kind {
        ModelKind::Aggregation => Err(Error::UnsupportedClosedForm {
            what: "skewness",
            route: "the Monte Carlo ensemble in simulate",
        }),
        _ => Ok(raw(p).skewness()),
    }
}

/// Skewness from the exact third cumulant of the mean-field model,
/// `V^{-3/2} · b/((1-M₁)(1-wM₁)) · (M₃/3 + wM₂²/(2(1-wM₁))) · R`.
///
/// [`superposed_skewness_mf`] is the published expression, which the fitting
/// pipeline keeps so that fitted tables remain comparable; the two agree when
/// `w = 0`. Monte Carlo ensembles follow this one.
pub fn superposed_skewness_cumulant(p: &ModelParams) -> Result<f64> {
    match p.kind {
        ModelKind::Aggregation => Err(Error::UnsupportedClosedForm {
            what: "skewness",
            route: "the Monte Carlo ensemble in simulate",
        }),
        _ => Ok(raw(p).skewness_cumulant()),
    }
}

/// `J = M₀b/(1-M₁)`, shared by all kinds.
pub fn superposed_jump_rate(p: &ModelParams) -> f64 {
    raw(p).jump_rate()
}

/// `H = 3/2 - α/2` when the Gamma shape `α` lies in `(1, 3)`, `None` otherwise.
pub fn hurst_exponent(shape: f64) -> Result<Option<f64>> {
    if !(shape > 1.0) {
        return Err(invalid("alpha", format!("Hurst exponent needs alpha > 1, got {shape}")));
    }
    Ok((shape < 3.0).then(|| 1.5 - 0.5 * shape))
}

/// Output of [`nondimensionalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Nondimensional {
    /// Time unit `t̄ = R/(1-M₁)`.
    pub time_scale: f64,
    /// Amount unit `X̄ = b·t̄`.
    pub amount_scale: f64,
    /// Parameters in units of `t̄` and `X̄`; their source rate and mean are 1.
    pub params: ModelParams,
}

/// Rescales time by `t̄` and amounts by `X̄` so that `b = 1` and `E[Z] = 1`.
///
/// Lags, speeds and the Gamma scale are multiplied by `t̄`; the jump measure is
/// expressed per unit `X̄`, so both `λ` and `μ` are multiplied by `X̄` and `M₁`
/// is unchanged.
pub fn nondimensionalize(p: &ModelParams) -> Result<Nondimensional> {
    let (shape, scale) = match p.mixture {
        ReversionMixture::Gamma { shape, scale } => (shape, scale),
        _ => {
            return Err(Error::Unsupported(
                "nondimensionalisation needs a Gamma mixture".into(),
            ))
        }
    };
    let m1 = p.jump.m1();
    let time_scale = 1.0 / ((1.0 - m1) * scale * (shape - 1.0));
    let amount_scale = p.source_rate * time_scale;
    let params = ModelParams::new(
        p.kind,
        1.0,
        p.weight,
        p.jump.rescaled(amount_scale)?,
        ReversionMixture::gamma(shape, scale * time_scale)?,
    )?;
    Ok(Nondimensional {
        time_scale,
        amount_scale,
        params,
    })
}
