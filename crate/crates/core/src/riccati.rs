//! Generalized Riccati and Lyapunov equations of the aggregation model on a
//! finite reversion-speed grid.
//!
//! For the Laplace transform `E[e^{-θZ}] = exp(-A(θ))` the exponent is
//! `A = b ∫ Σ π_i B_t(r_i) dt` where, per node,
//!
//! ```text
//! dB_i/dt = r_i { -B_i + w·L(B_i) + (1-w)·Σ_j π_j L(B_j) },   B_0 = θ,
//! L(x) = ∫(1 - e^{-xz}) ν(dz) = μx/(λ + x).
//! ```
//!
//! The θ-derivatives at zero obey the linear Lyapunov system
//!
//! ```text
//! dE1_i/dt = r_i { -(1-wM₁) E1_i + (1-w)M₁ Σ π_j E1_j },                      E1_0 = 1
//! dE2_i/dt = r_i { -(1-wM₁) E2_i + (1-w)M₁ Σ π_j E2_j }
//!          + r_i M₂ { w E1_i² + (1-w) Σ π_j E1_j² },                           E2_0 = 0
//! ```
//!
//! `E2` is the negated second derivative, so it is nonnegative and
//! `Var[Z] = b ∫ Σ π_i E2_i dt`.
//!
//! Both systems are integrated with a second-order exponential time
//! differencing scheme: the diagonal decay is applied exactly and the
//! remaining terms enter through the stage values. The update is a convex
//! combination of the previous value and the stage targets, so nonnegativity
//! and the bound `B ≤ θ/(1-M₁)` carry over from step to step.

use crate::closedform::{ModelKind, ModelParams};
use crate::error::{invalid, Error, Result};
use crate::measures::RGrid;

/// Time-stepping controls shared by the Riccati and Lyapunov solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct Numerics {
    /// Step length.
    pub dt: f64,
    /// Stop once every node has decayed below `tol` (relative to θ for Riccati).
    pub tol: f64,
    /// Hard horizon.
    pub t_max: f64,
    /// Spacing of stored trajectory snapshots; `None` keeps only the endpoints.
    pub record_interval: Option<f64>,
    /// Upper limit on stored snapshots.
    pub max_records: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            tol: 1e-10,
            t_max: 1e4,
            record_interval: None,
            max_records: 10_000,
        }
    }
}

impl Numerics {
    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", format!("must be positive, got {}", self.tol)));
        }
        if !(self.t_max > 0.0) {
            return Err(invalid("t_max", format!("must be positive, got {}", self.t_max)));
        }
        if let Some(h) = self.record_interval {
            if !(h > 0.0) {
                return Err(invalid("record_interval", format!("must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Reached the horizon before the stopping tolerance; `tail_bound` estimates
/// the neglected part of the time integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationWarning {
    pub horizon: f64,
    pub tail_bound: f64,
}

/// Stored state at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub values: Vec<f64>,
}

/// Per-node ETD2 coefficients for decay rate `k` and step `h`.
///
/// `u_new = q·u + c_now·N(u) + c_stage·N(a)` with `a = q·u + (1-q)·N(u)`.
#[derive(Debug, Clone, Copy)]
struct Etd2 {
    q: f64,
    one_minus_q: f64,
    c_now: f64,
    c_stage: f64,
}

impl Etd2 {
    fn new(k: f64, h: f64) -> Self {
        let z = k * h;
        let one_minus_q = -(-z).exp_m1();
        // (z - 1 + e^{-z})/z, by series where the closed form cancels.
        let c_stage = if z < 1e-4 {
            z / 2.0 - z * z / 6.0 + z * z * z / 24.0
        } else {
            (z - one_minus_q) / z
        };
        Self {
            q: 1.0 - one_minus_q,
            one_minus_q,
            c_now: one_minus_q - c_stage,
            c_stage,
        }
    }
}

fn weighted_sum(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(p, v)| p * v).sum()
}

fn check_kind(p: &ModelParams) -> Result<()> {
    match p.kind() {
        ModelKind::MeanField => Err(Error::Unsupported(
            "Riccati and Lyapunov systems describe the aggregation model (or the previous model at w = 1)"
                .into(),
        )),
        _ => Ok(()),
    }
}

struct Recorder {
    interval: Option<f64>,
    next: f64,
    max: usize,
    snapshots: Vec<Snapshot>,
}

impl Recorder {
    fn new(numerics: &Numerics, initial: &[f64]) -> Self {
        Self {
            interval: numerics.record_interval,
            next: numerics.record_interval.unwrap_or(f64::INFINITY),
            max: numerics.max_records.max(2),
            snapshots: vec![Snapshot {
                time: 0.0,
                values: initial.to_vec(),
            }],
        }
    }

    fn offer(&mut self, time: f64, values: &[f64], dt: f64) {
        if let Some(h) = self.interval {
            if time + 0.5 * dt >= self.next && self.snapshots.len() + 1 < self.max {
                self.snapshots.push(Snapshot {
                    time,
                    values: values.to_vec(),
                });
                while self.next <= time + 0.5 * dt {
                    self.next += h;
                }
            }
        }
    }

    fn finish(mut self, time: f64, values: &[f64]) -> Vec<Snapshot> {
        if self.snapshots.last().map(|s| s.time) != Some(time) {
            self.snapshots.push(Snapshot {
                time,
                values: values.to_vec(),
            });
        }
        self.snapshots
    }
}

/// Solution of the generalized Riccati system for one θ.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub grid: RGrid,
    pub theta: f64,
    pub dt: f64,
    /// Time at which integration stopped.
    pub horizon: f64,
    pub trajectory: Vec<Snapshot>,
    /// `A = b ∫ Σ π_i B_i dt` over `[0, horizon]`.
    pub exponent: f64,
    /// `b Σ π_i B_{T,i} / (r_i(1-M₁))`, an estimate of the neglected tail of `A`.
    pub tail_bound: f64,
    pub truncation: Option<TruncationWarning>,
    /// Steps on which `max_i B` grew; zero in every configuration seen so far.
    pub non_monotone_steps: usize,
}

/// `E[e^{-θZ}]` together with the truncation state of the solve behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mgf {
    pub value: f64,
    pub tail_bound: f64,
    pub truncation: Option<TruncationWarning>,
}

impl RiccatiSolution {
    /// `exp(-A)`.
    pub fn mgf(&self) -> Mgf {
        Mgf {
            value: (-self.exponent).exp(),
            tail_bound: self.tail_bound,
            truncation: self.truncation,
        }
    }

    pub fn final_state(&self) -> &[f64] {
        &self.trajectory.last().expect("at least one snapshot").values
    }
}

/// Integrates the generalized Riccati system from `B_0 ≡ θ`.
pub fn solve_riccati(p: &ModelParams, grid: &RGrid, theta: f64, numerics: &Numerics) -> Result<RiccatiSolution> {
    check_kind(p)?;
    numerics.validate()?;
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(invalid("theta", format!("must be finite and nonnegative, got {theta}")));
    }
    let jump = *p.jump();
    let m1 = jump.m1();
    let w = p.weight();
    let b = p.source_rate();
    let weights = grid.weights();
    let speeds = grid.speeds();
    let n = grid.len();
    let dt = numerics.dt;
    let upper = theta / (1.0 - m1);

    let mut state = vec![theta; n];
    let mut recorder = Recorder::new(numerics, &state);

    if theta == 0.0 {
        return Ok(RiccatiSolution {
            grid: grid.clone(),
            theta,
            dt,
            horizon: 0.0,
            trajectory: recorder.finish(0.0, &state),
            exponent: 0.0,
            tail_bound: 0.0,
            truncation: None,
            non_monotone_steps: 0,
        });
    }

    let coeffs: Vec<Etd2> = speeds.iter().map(|&r| Etd2::new(r, dt)).collect();
    let mut lap = vec![0.0; n];
    let mut target = vec![0.0; n];
    let mut stage = vec![0.0; n];

    let fill_target = |values: &[f64], lap: &mut [f64], target: &mut [f64]| {
        for (l, &v) in lap.iter_mut().zip(values) {
            *l = jump.laplace_exponent(v);
        }
        let agg = (1.0 - w) * weighted_sum(weights, lap);
        for (t, &l) in target.iter_mut().zip(lap.iter()) {
            *t = w * l + agg;
        }
    };

    let mut time = 0.0;
    let mut steps: u64 = 0;
    let mut integral = 0.0;
    let mut level = weighted_sum(weights, &state);
    let mut peak = theta;
    let mut non_monotone_steps = 0;
    let stop_level = numerics.tol * theta;

    loop {
        fill_target(&state, &mut lap, &mut target);
        for i in 0..n {
            stage[i] = coeffs[i].q * state[i] + coeffs[i].one_minus_q * target[i];
        }
        let now_target = target.clone();
        fill_target(&stage, &mut lap, &mut target);
        let mut max_now = 0.0_f64;
        for i in 0..n {
            let c = &coeffs[i];
            let v = c.q * state[i] + c.c_now * now_target[i] + c.c_stage * target[i];
            if v < -1e-12 || v > upper + 1e-9 || !v.is_finite() {
                return Err(Error::SolverInstability {
                    time: time + dt,
                    node: i,
                    value: v,
                    upper,
                });
            }
            state[i] = v;
            max_now = max_now.max(v);
        }
        steps += 1;
        time = steps as f64 * dt;
        let new_level = weighted_sum(weights, &state);
        integral += 0.5 * dt * (level + new_level);
        level = new_level;
        if max_now > peak * (1.0 + 1e-14) {
            non_monotone_steps += 1;
        }
        peak = max_now;
        recorder.offer(time, &state, dt);

        if max_now < stop_level || time >= numerics.t_max {
            break;
        }
    }

    let exponent = b * integral;
    let tail_bound = b * speeds
        .iter()
        .zip(weights)
        .zip(&state)
        .map(|((r, p), v)| p * v / (r * (1.0 - m1)))
        .sum::<f64>();
    let converged = peak < stop_level;
    let truncation = (!converged && tail_bound > numerics.tol * exponent.max(f64::MIN_POSITIVE))
        .then_some(TruncationWarning {
            horizon: time,
            tail_bound,
        });

    Ok(RiccatiSolution {
        grid: grid.clone(),
        theta,
        dt,
        horizon: time,
        trajectory: recorder.finish(time, &state),
        exponent,
        tail_bound,
        truncation,
        non_monotone_steps,
    })
}

/// Order of a Lyapunov solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapunovOrder {
    First,
    /// Integrates the first-order system alongside, since it drives the second.
    Second,
}

/// Solution of the Lyapunov system.
#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub grid: RGrid,
    pub order: LyapunovOrder,
    pub dt: f64,
    pub horizon: f64,
    /// Snapshots of `E1`.
    pub first: Vec<Snapshot>,
    /// Snapshots of `E2` (second order only).
    pub second: Vec<Snapshot>,
    /// `∫ Σ π_i E1_i dt`.
    pub first_integral: f64,
    /// `∫ Σ π_i E2_i dt` (second order only, zero otherwise).
    pub second_integral: f64,
    /// `∫ (Σ π_i E1_i)² dt`.
    pub squared_integral: f64,
    /// Estimated neglected tail of `first_integral`.
    pub tail_bound: f64,
    pub truncation: Option<TruncationWarning>,
}

/// Integrates the Lyapunov system of the requested order.
pub fn solve_lyapunov(
    p: &ModelParams,
    grid: &RGrid,
    order: LyapunovOrder,
    numerics: &Numerics,
) -> Result<LyapunovSolution> {
    check_kind(p)?;
    numerics.validate()?;
    let jump = *p.jump();
    let m1 = jump.m1();
    let m2 = jump.moment(2);
    let w = p.weight();
    let decay = 1.0 - w * m1;
    let coupling = (1.0 - w) * m1;
    let weights = grid.weights();
    let speeds = grid.speeds();
    let n = grid.len();
    let dt = numerics.dt;
    let upper = decay / (1.0 - m1);
    let second = order == LyapunovOrder::Second;

    let coeffs: Vec<Etd2> = speeds.iter().map(|&r| Etd2::new(r * decay, dt)).collect();

    let mut e1 = vec![1.0; n];
    let mut e2 = vec![0.0; n];
    let mut rec1 = Recorder::new(numerics, &e1);
    let mut rec2 = Recorder::new(numerics, &e2);

    // Targets are the forcing divided by the diagonal decay, matching the
    // form u' = k(-u + target).
    let targets = |e1: &[f64], e2: &[f64], t1: &mut [f64], t2: &mut [f64]| {
        let avg1 = weighted_sum(weights, e1);
        let c1 = coupling * avg1 / decay;
        t1.iter_mut().for_each(|t| *t = c1);
        if second {
            let avg2 = weighted_sum(weights, e2);
            let avg_sq: f64 = weights.iter().zip(e1).map(|(p, v)| p * v * v).sum();
            let shared = (coupling * avg2 + m2 * (1.0 - w) * avg_sq) / decay;
            for (t, &v) in t2.iter_mut().zip(e1) {
                *t = shared + m2 * w * v * v / decay;
            }
        }
    };

    let mut t1 = vec![0.0; n];
    let mut t2 = vec![0.0; n];
    let mut s1 = vec![0.0; n];
    let mut s2 = vec![0.0; n];
    let mut u1 = vec![0.0; n];
    let mut u2 = vec![0.0; n];

    let mut time = 0.0;
    let mut steps: u64 = 0;
    let mut avg1 = weighted_sum(weights, &e1);
    let mut avg2 = 0.0;
    let mut first_integral = 0.0;
    let mut second_integral = 0.0;
    let mut squared_integral = 0.0;
    let mut peak2 = 0.0_f64;
    let mut converged = false;

    loop {
        targets(&e1, &e2, &mut t1, &mut t2);
        for i in 0..n {
            let c = &coeffs[i];
            s1[i] = c.q * e1[i] + c.one_minus_q * t1[i];
            if second {
                s2[i] = c.q * e2[i] + c.one_minus_q * t2[i];
            }
        }
        targets(&s1, &s2, &mut u1, &mut u2);
        let mut max1 = 0.0_f64;
        let mut max2 = 0.0_f64;
        for i in 0..n {
            let c = &coeffs[i];
            let v1 = c.q * e1[i] + c.c_now * t1[i] + c.c_stage * u1[i];
            if v1 < -1e-12 || v1 > upper + 1e-9 || !v1.is_finite() {
                return Err(Error::SolverInstability {
                    time: time + dt,
                    node: i,
                    value: v1,
                    upper,
                });
            }
            e1[i] = v1;
            max1 = max1.max(v1);
            if second {
                let v2 = c.q * e2[i] + c.c_now * t2[i] + c.c_stage * u2[i];
                if v2 < -1e-12 || !v2.is_finite() {
                    return Err(Error::SolverInstability {
                        time: time + dt,
                        node: i,
                        value: v2,
                        upper: f64::INFINITY,
                    });
                }
                e2[i] = v2;
                max2 = max2.max(v2);
            }
        }
        steps += 1;
        time = steps as f64 * dt;
        let new1 = weighted_sum(weights, &e1);
        first_integral += 0.5 * dt * (avg1 + new1);
        squared_integral += 0.5 * dt * (avg1 * avg1 + new1 * new1);
        avg1 = new1;
        if second {
            let new2 = weighted_sum(weights, &e2);
            second_integral += 0.5 * dt * (avg2 + new2);
            avg2 = new2;
            peak2 = peak2.max(max2);
        }
        rec1.offer(time, &e1, dt);
        if second {
            rec2.offer(time, &e2, dt);
        }

        let done1 = max1 < numerics.tol;
        let done2 = !second || max2 < numerics.tol * peak2.max(f64::MIN_POSITIVE);
        if done1 && done2 {
            converged = true;
            break;
        }
        if time >= numerics.t_max {
            break;
        }
    }

    let tail_bound: f64 = speeds
        .iter()
        .zip(weights)
        .zip(&e1)
        .map(|((r, p), v)| p * v / (r * (1.0 - m1)))
        .sum();
    let truncation = (!converged && tail_bound > numerics.tol * first_integral).then_some(
        TruncationWarning {
            horizon: time,
            tail_bound,
        },
    );

    Ok(LyapunovSolution {
        grid: grid.clone(),
        order,
        dt,
        horizon: time,
        first: rec1.finish(time, &e1),
        second: if second { rec2.finish(time, &e2) } else { Vec::new() },
        first_integral,
        second_integral,
        squared_integral,
        tail_bound,
        truncation,
    })
}

/// `E[Z] = b ∫ Σ π_i E1_i dt`.
pub fn ag_mean(p: &ModelParams, grid: &RGrid, numerics: &Numerics) -> Result<f64> {
    let sol = solve_lyapunov(p, grid, LyapunovOrder::First, numerics)?;
    Ok(p.source_rate() * sol.first_integral)
}

/// Relative gap above which the two variance routes are declared inconsistent.
pub const ROUTE_TOLERANCE: f64 = 0.02;

/// Aggregation-model variance by two routes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgVariance {
    /// `bM₂/((1-M₁)(1-wM₁)) · {R/2 + (1-w)M₁·Q}` with `Q = ∫(Σ π_i E1_i)² dt`.
    pub value: f64,
    /// `b ∫ Σ π_i E2_i dt` from the second-order system.
    pub lyapunov_route: f64,
    /// `|lyapunov_route - value| / value`.
    pub relative_gap: f64,
    pub mean: f64,
    pub squared_integral: f64,
}

/// Variance of the aggregation model; both routes come from one solve.
pub fn ag_variance(p: &ModelParams, grid: &RGrid, numerics: &Numerics) -> Result<AgVariance> {
    let sol = solve_lyapunov(p, grid, LyapunovOrder::Second, numerics)?;
    let jump = p.jump();
    let (m1, m2) = (jump.m1(), jump.moment(2));
    let w = p.weight();
    let b = p.source_rate();
    let r_mass = grid.inv_speed_mass();
    let value = b * m2 / ((1.0 - m1) * (1.0 - w * m1))
        * (0.5 * r_mass + (1.0 - w) * m1 * sol.squared_integral);
    let lyapunov_route = b * sol.second_integral;
    let relative_gap = (lyapunov_route - value).abs() / value;
    if relative_gap > ROUTE_TOLERANCE {
        return Err(Error::RouteMismatch {
            gap: relative_gap,
            limit: ROUTE_TOLERANCE,
        });
    }
    Ok(AgVariance {
        value,
        lyapunov_route,
        relative_gap,
        mean: b * sol.first_integral,
        squared_integral: sol.squared_integral,
    })
}
