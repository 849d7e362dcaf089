use thiserror::Error;

/// Errors raised by model construction, solvers, simulation and fitting.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("inverse-speed mass diverges: Gamma shape {shape} must exceed 1")]
    DivergentMass { shape: f64 },

    #[error("nonstationary jump measure: M1 = {m1} must lie below 1")]
    Nonstationary { m1: f64 },

    #[error("no closed form for {what} in the aggregation model; use {route}")]
    UnsupportedClosedForm {
        what: &'static str,
        route: &'static str,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error("numerical failure in bin {bin}: {reason}")]
    Quantile { bin: usize, reason: String },

    #[error(
        "solver instability at t = {time}: node {node} left [0, {upper}] with value {value}; reduce the time step"
    )]
    SolverInstability {
        time: f64,
        node: usize,
        value: f64,
        upper: f64,
    },

    #[error("moment routes disagree: relative gap {gap:.4} exceeds {limit}; refine the grid or time step")]
    RouteMismatch { gap: f64, limit: f64 },

    #[error("jump probability per step {probability:.4} exceeds 1 at t = {time}; reduce the time step")]
    StepTooLarge { probability: f64, time: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty series: {0}")]
    EmptySeries(String),

    #[error("degenerate series: {0}")]
    Degenerate(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
