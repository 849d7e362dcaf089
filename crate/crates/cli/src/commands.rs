use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};

use superpose::closedform::{
    superposed_acf, superposed_jump_rate, superposed_mean, superposed_skewness_cumulant, superposed_variance,
    ModelKind, ModelParams,
};
use superpose::empirical::read_series_file;
use superpose::fit::{fit_series, FitResult, WMode};
use superpose::riccati::{ag_mean, ag_variance, solve_riccati, Numerics};
use superpose::simulate::{ensemble_stats, simulate_ensemble, stats_from_paths, SimConfig, STEP_WARNING};

use crate::output::{expand_inputs, label_of, num, opt, Meta, Sink, Table};
use crate::{Cli, Command, SimArgs};

/// Invalid invocation or configuration (exit status 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Inputs that could not be processed, with the reason.
pub type Failures = Vec<(PathBuf, String)>;

fn load_params(path: &Path) -> Result<(ModelParams, Value)> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: invalid JSON: {e}", path.display())))?;
    let params: ModelParams = serde_json::from_value(value.clone())
        .map_err(|e| config_err(format!("{}: invalid parameters: {e}", path.display())))?;
    Ok((params, value))
}

fn params_path(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::Simulate(sim) | Command::Compare { sim, .. } => Some(&sim.params),
        Command::Riccati { params, .. } => Some(params),
        _ => None,
    }
}

pub fn run(cli: &Cli) -> Result<Failures> {
    let seed = cli.seed.unwrap_or(SimConfig::default().seed);
    let loaded = params_path(&cli.command).map(load_params).transpose()?;
    let config = json!({
        "cli": cli,
        "seed": seed,
        "params": loaded.as_ref().map(|(_, v)| v.clone()),
    });
    let sink = Sink {
        dir: cli.out.clone(),
        format: cli.format,
        meta: Meta::new(seed, &config),
    };
    let params = loaded.map(|(p, _)| p);
    match &cli.command {
        Command::Stats { inputs } => stats(inputs, &sink),
        Command::Acf { inputs, lags } => acf(inputs, *lags, &sink),
        Command::Fit { inputs, lags, w } => fit(inputs, *lags, w, &sink),
        Command::Simulate(sim) => simulate(params.as_ref().expect("loaded"), sim, seed, &sink),
        Command::Riccati {
            theta,
            n,
            dt,
            t_max,
            interval,
            ..
        } => riccati(
            params.as_ref().expect("loaded"),
            *theta,
            *n,
            Numerics {
                dt: *dt,
                t_max: *t_max,
                record_interval: Some(*interval),
                ..Numerics::default()
            },
            &sink,
        ),
        Command::Compare { sim, w, ode_dt } => compare(params.as_ref().expect("loaded"), sim, w, *ode_dt, seed, &sink),
    }
}

fn inputs_or_fail(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let files = expand_inputs(inputs).map_err(|e| config_err(format!("{e:#}")))?;
    if files.is_empty() {
        return Err(config_err("no CSV inputs found"));
    }
    Ok(files)
}

fn stats(inputs: &[PathBuf], sink: &Sink) -> Result<Failures> {
    let mut table = Table::new("stats", ["label", "I", "Ave", "Var", "CV", "Jmp", "Skw"]);
    let mut failed = Failures::new();
    for file in inputs_or_fail(inputs)? {
        match read_series_file(&file).and_then(|s| s.trim()).and_then(|s| s.summary()) {
            Ok(s) => table.push(vec![
                json!(label_of(&file)),
                json!(s.len),
                num(s.ave),
                num(s.var),
                num(s.cv),
                num(s.jmp),
                num(s.skw),
            ]),
            Err(e) => failed.push((file, e.to_string())),
        }
    }
    sink.write(&table, true)?;
    Ok(failed)
}

fn acf(inputs: &[PathBuf], lags: usize, sink: &Sink) -> Result<Failures> {
    let mut table = Table::new("acf", ["label", "lag", "acf"]);
    let mut failed = Failures::new();
    for file in inputs_or_fail(inputs)? {
        let result = read_series_file(&file)
            .and_then(|s| s.trim())
            .and_then(|s| {
                if s.lag_is_unreliable(lags) {
                    log::warn!("{}: lag {lags} exceeds half the series length {}", file.display(), s.len());
                }
                s.sample_acf(lags)
            });
        match result {
            Ok(values) => {
                for (k, v) in values.iter().enumerate() {
                    table.push(vec![json!(label_of(&file)), json!(k), num(*v)]);
                }
            }
            Err(e) => failed.push((file, e.to_string())),
        }
    }
    sink.write(&table, true)?;
    Ok(failed)
}

const FIT_COLUMNS: [&str; 18] = [
    "label",
    "I",
    "alpha",
    "beta",
    "H",
    "b",
    "lambda",
    "mu",
    "w",
    "beta_tilde",
    "M1",
    "realizable_w_lower_bound",
    "negative_b",
    "long_memory",
    "Skw",
    "Skw_theory",
    "Skw_relative_error",
    "acf_objective",
];

fn fit_row(label: &str, len: usize, skw: f64, objective: f64, r: &FitResult) -> Vec<Value> {
    vec![
        json!(label),
        json!(len),
        num(r.alpha),
        num(r.beta),
        opt(r.hurst),
        num(r.b),
        num(r.lambda),
        num(r.mu),
        num(r.w),
        num(r.beta_tilde),
        num(r.m1),
        num(r.realizable_w_lower_bound),
        json!(r.negative_b),
        json!(r.long_memory),
        num(skw),
        num(r.skewness_theory),
        num(r.skewness_relative_error),
        num(objective),
    ]
}

fn fit(inputs: &[PathBuf], lags: usize, w: &str, sink: &Sink) -> Result<Failures> {
    let mode = match w {
        "fixed" => WMode::Fixed(1.0),
        "fit" => WMode::Fitted,
        other => match other.parse::<f64>() {
            Ok(v) if (0.0..=1.0).contains(&v) => WMode::Fixed(v),
            _ => return Err(config_err(format!("--w must be `fixed`, `fit` or a value in [0, 1], got {other:?}"))),
        },
    };
    if lags < 3 {
        return Err(config_err(format!("--lags must be at least 3, got {lags}")));
    }
    let mut table = Table::new("fit", FIT_COLUMNS);
    let mut skew = Table::new(
        "skewness",
        [
            "label",
            "Skw",
            "Skw_fixed",
            "error_fixed",
            "w_fitted",
            "Skw_fitted",
            "error_fitted",
            "improvement",
            "negative_b",
        ],
    );
    let mut failed = Failures::new();
    for file in inputs_or_fail(inputs)? {
        let label = label_of(&file);
        let result = read_series_file(&file).and_then(|s| fit_series(&s, lags, mode));
        let f = match result {
            Ok(f) => f,
            Err(e) => {
                failed.push((file, e.to_string()));
                continue;
            }
        };
        let shown = f.fitted.as_ref().unwrap_or(&f.fixed);
        table.push(fit_row(&label, f.stats.len, f.stats.skw, f.acf_fit.objective, shown));
        if let Some(fitted) = &f.fitted {
            skew.push(vec![
                json!(label),
                num(f.stats.skw),
                num(f.fixed.skewness_theory),
                num(f.fixed.skewness_relative_error),
                num(fitted.w),
                num(fitted.skewness_theory),
                num(fitted.skewness_relative_error),
                num(fitted.skewness_relative_error / f.fixed.skewness_relative_error),
                json!(fitted.negative_b),
            ]);
        }
    }
    sink.write(&table, true)?;
    if mode == WMode::Fitted {
        sink.write(&skew, false)?;
    }
    Ok(failed)
}

fn sim_config(sim: &SimArgs, seed: u64) -> Result<SimConfig> {
    let cfg = SimConfig {
        grid_size: sim.n,
        dt: sim.dt,
        burn_in: sim.burn_in,
        horizon: sim.horizon,
        sample_interval: sim.interval,
        replicates: sim.replicates.max(1),
        seed,
    };
    cfg.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(cfg)
}

fn warn_step(max_probability: f64) {
    if max_probability > STEP_WARNING {
        log::warn!(
            "jump probability per step reached {max_probability:.3}; first-order thinning bias may be visible, consider a smaller --dt"
        );
    }
}

fn simulate(p: &ModelParams, sim: &SimArgs, seed: u64, sink: &Sink) -> Result<Failures> {
    let cfg = sim_config(sim, seed)?;
    let grid = p.mixture().discretize(sim.n).context("discretizing the mixture")?;
    let paths = simulate_ensemble(p, &grid, &cfg)?;
    warn_step(paths.iter().map(|q| q.max_step_probability).fold(0.0, f64::max));

    let mut path_table = Table::new("paths", ["replicate", "time", "Z"]);
    for path in paths.iter().take(sim.paths.max(1)) {
        for (t, z) in path.times.iter().zip(&path.values) {
            path_table.push(vec![json!(path.replicate), num(*t), num(*z)]);
        }
    }
    if paths.len() < 2 {
        sink.write(&path_table, true)?;
        return Ok(Failures::new());
    }
    let ens = stats_from_paths(&paths, cfg.effective_interval(), &sim.lags)?;
    let closed = p.kind() != ModelKind::Aggregation;
    let mut table = Table::new("ensemble", ["statistic", "lag", "value", "se", "closed_form"]);
    let row = |name: &str, lag: Option<f64>, e: superpose::simulate::Estimate, c: Option<f64>| {
        vec![json!(name), opt(lag), num(e.value), num(e.se), opt(c)]
    };
    table.push(row("mean", None, ens.mean, Some(superposed_mean(p))));
    table.push(row(
        "variance",
        None,
        ens.variance,
        closed.then(|| superposed_variance(p).ok()).flatten(),
    ));
    table.push(row(
        "skewness",
        None,
        ens.skewness,
        closed.then(|| superposed_skewness_cumulant(p).ok()).flatten(),
    ));
    table.push(row("jump_rate", None, ens.jump_rate, Some(superposed_jump_rate(p))));
    for (lag, e) in ens.lags.iter().zip(&ens.acf) {
        table.push(row(
            "acf",
            Some(*lag),
            *e,
            closed.then(|| superposed_acf(p, *lag).ok()).flatten(),
        ));
    }
    sink.write(&table, true)?;
    sink.write(&path_table, false)?;
    Ok(Failures::new())
}

fn riccati(p: &ModelParams, theta: f64, n: usize, numerics: Numerics, sink: &Sink) -> Result<Failures> {
    let grid = p.mixture().discretize(n).context("discretizing the mixture")?;
    let sol = solve_riccati(p, &grid, theta, &numerics)?;
    if let Some(t) = sol.truncation {
        log::warn!(
            "integration stopped at the horizon {} before the tolerance; neglected tail ≤ {:.3e}",
            t.horizon,
            t.tail_bound
        );
    }
    let mean = ag_mean(p, &grid, &numerics)?;
    let var = ag_variance(p, &grid, &numerics)?;
    let mgf = sol.mgf();
    let mut table = Table::new(
        "riccati",
        [
            "theta",
            "exponent",
            "mgf",
            "horizon",
            "tail_bound",
            "truncated",
            "mean",
            "mean_closed_form",
            "variance",
            "variance_lyapunov",
            "route_gap",
        ],
    );
    table.push(vec![
        num(theta),
        num(sol.exponent),
        num(mgf.value),
        num(sol.horizon),
        num(sol.tail_bound),
        json!(sol.truncation.is_some()),
        num(mean),
        num(superposed_mean(p)),
        num(var.value),
        num(var.lyapunov_route),
        num(var.relative_gap),
    ]);
    let mut columns = vec!["t".to_string()];
    columns.extend(grid.speeds().iter().map(|r| format!("B(r={r:.6e})")));
    let mut trajectory = Table::new("trajectory", columns);
    for snap in &sol.trajectory {
        let mut row = vec![num(snap.time)];
        row.extend(snap.values.iter().map(|v| num(*v)));
        trajectory.push(row);
    }
    sink.write(&table, true)?;
    sink.write(&trajectory, false)?;
    Ok(Failures::new())
}

fn compare(p: &ModelParams, sim: &SimArgs, weights: &[f64], ode_dt: f64, seed: u64, sink: &Sink) -> Result<Failures> {
    if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(config_err(format!("weights must lie in [0, 1], got {w}")));
    }
    let monte_carlo = sim.replicates >= 2;
    let cfg = sim_config(sim, seed)?;
    let grid = p.mixture().discretize(sim.n).context("discretizing the mixture")?;
    let numerics = Numerics {
        dt: ode_dt,
        ..Numerics::default()
    };
    let mut columns: Vec<String> = [
        "w",
        "var_previous",
        "var_mf",
        "var_ag",
        "var_ag_lyapunov",
        "route_gap",
        "mc_var_ag",
        "mc_var_ag_se",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for lag in &sim.lags {
        columns.push(format!("acf_mf@{lag}"));
        columns.push(format!("acf_ag@{lag}"));
        columns.push(format!("acf_ag_se@{lag}"));
    }
    let mut table = Table::new("compare", columns);
    let previous = p.with_kind(ModelKind::Previous, 1.0)?;
    let var_previous = superposed_variance(&previous)?;
    for &w in weights {
        let mf = p.with_kind(ModelKind::MeanField, w)?;
        let ag = p.with_kind(ModelKind::Aggregation, w)?;
        let var = ag_variance(&ag, &grid, &numerics)?;
        let ens = if monte_carlo {
            let e = ensemble_stats(&ag, &grid, &cfg, &sim.lags)?;
            warn_step(e.max_step_probability);
            Some(e)
        } else {
            None
        };
        let mut row = vec![
            num(w),
            num(var_previous),
            num(superposed_variance(&mf)?),
            num(var.value),
            num(var.lyapunov_route),
            num(var.relative_gap),
            opt(ens.as_ref().map(|e| e.variance.value)),
            opt(ens.as_ref().map(|e| e.variance.se)),
        ];
        for (k, lag) in sim.lags.iter().enumerate() {
            row.push(num(superposed_acf(&mf, *lag)?));
            row.push(opt(ens.as_ref().map(|e| e.acf[k].value)));
            row.push(opt(ens.as_ref().map(|e| e.acf[k].se)));
        }
        table.push(row);
    }
    sink.write(&table, true)?;
    Ok(Failures::new())
}
