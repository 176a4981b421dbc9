//! Batch front-end: parse a run config, dispatch simulations and
//! certifications, emit CSV tables, SVG plots and a run manifest.
//!
//! Exit-code contract: 0 ok, 2 config error, 3 runtime error, 4 at least one
//! certified bound violated.

pub mod config;
pub mod csv;
pub mod manifest;
pub mod svg;

use config::{ConfigError, RunConfig};
use csv::{fmt_float, fmt_opt_float, fmt_opt_int, Table};
use oulab::coeffs::{sample_coefficient_path, CoefficientProcessSpec, HypothesisEstimates};
use oulab::flows::certify_h0;
use oulab::flows::H0Certificate;
use oulab::sde::{simulate, InitialCondition, OUSimConfig, SimMethod};
use oulab::stability::{
    certify_as_lyapunov, certify_averaged_flow, certify_contraction, certify_event_probability,
    certify_fluctuation, certify_lemma, certify_mean_log, certify_moment_boundedness,
    certify_moment_window, BoundReport, TheoremWindow, Verdict,
};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_VIOLATED: i32 = 4;

/// Test hook: when this env var is set to a non-empty value, every bound is
/// multiplied by zero before the verdicts are recomputed. Exists to exercise
/// the exit-code plumbing end to end.
pub const ZERO_BOUND_ENV: &str = "OULAB_TEST_ZERO_BOUND";

#[derive(Debug)]
pub enum AppError {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<oulab::Error> for AppError {
    fn from(e: oulab::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => EXIT_CONFIG,
            AppError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            AppError::Config(m) | AppError::Runtime(m) => m,
        }
    }
}

/// Flag/env overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub svg: bool,
}

/// Context shared by the subcommands.
pub struct RunContext {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub config_hash: String,
    pub started: std::time::Instant,
}

pub fn prepare(config_path: &Path, overrides: &Overrides) -> Result<RunContext, AppError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = overrides.seed {
        cfg.simulation.seed = seed;
    }
    if overrides.svg {
        cfg.output.svg = true;
    }
    let out_dir = overrides
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| AppError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let threads = overrides.threads.unwrap_or(0);
    if threads > 0 {
        // Worker count must not change any output; it only changes wall time.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Ok(RunContext {
        cfg,
        out_dir,
        threads,
        config_hash: manifest::sha256_hex(text.as_bytes()),
        started: std::time::Instant::now(),
    })
}

fn write_out(ctx: &RunContext, name: &str, contents: &str) -> Result<(), AppError> {
    let path = ctx.out_dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| AppError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Flow certificate + moment-constant estimates for one epsilon.
fn constants_pipeline(
    cfg: &RunConfig,
    epsilon: f64,
) -> Result<(CoefficientProcessSpec, H0Certificate, HypothesisEstimates), AppError> {
    let spec = cfg.spec(epsilon)?;
    let cert = certify_h0(
        &spec.flow,
        cfg.estimation.horizon,
        cfg.estimation.grid_points.max(2),
    )?;
    let grid =
        oulab::coeffs::uniform_grid(cfg.estimation.horizon, cfg.estimation.grid_points.max(2));
    let orders = cfg.estimation_orders();
    // c_n is epsilon-free; route the degenerate epsilon = 0 case through a
    // unit-perturbation spec so the estimator precondition holds.
    let h1_spec = if epsilon > 0.0 {
        spec.clone()
    } else {
        spec.with_epsilon(1.0)?
    };
    let h1 =
        oulab::coeffs::estimate_h1_constants(&h1_spec, &orders, cfg.estimation.samples, &grid)?;
    let rest = estimate_all_but_h1(&spec, &orders, cfg.estimation.samples, &grid)?;
    Ok((spec, cert, h1.merge(rest)))
}

fn estimate_all_but_h1(
    spec: &CoefficientProcessSpec,
    orders: &[u32],
    samples: usize,
    grid: &[f64],
) -> Result<HypothesisEstimates, AppError> {
    let h2 = oulab::coeffs::estimate_h2_constants(spec, orders, samples, grid)?;
    let rho = oulab::coeffs::estimate_rho_n(spec, orders, samples, grid)?;
    Ok(h2.merge(rho))
}

const BOUND_HEADER: [&str; 10] = [
    "quantity", "n", "epsilon", "t", "bound", "estimate", "stderr", "samples", "verdict", "margin",
];

fn push_report(table: &mut Table, rep: &BoundReport) {
    table.push(vec![
        rep.quantity.clone(),
        fmt_opt_int(rep.n),
        fmt_opt_float(rep.epsilon),
        fmt_opt_float(rep.t),
        fmt_float(rep.bound),
        fmt_float(rep.estimate),
        fmt_float(rep.stderr),
        rep.samples.to_string(),
        rep.verdict.to_string(),
        fmt_float(rep.margin),
    ]);
}

/// Gate refusals become ordinary rows so a certify run never crashes on an
/// unsatisfiable precondition.
fn push_gate_row(table: &mut Table, quantity: &str, n: u32, epsilon: f64, kind: &str) {
    table.push(vec![
        quantity.to_string(),
        n.to_string(),
        fmt_float(epsilon),
        String::new(),
        "nan".into(),
        "nan".into(),
        "nan".into(),
        "0".into(),
        kind.to_string(),
        "nan".into(),
    ]);
}

/// `constants`: the closed-form table per (n, epsilon).
pub fn cmd_constants(ctx: &RunContext) -> Result<(), AppError> {
    let cfg = &ctx.cfg;
    let eps_values = if cfg.model.epsilon_sweep.is_empty() {
        vec![cfg.model.epsilon]
    } else {
        cfg.model.epsilon_sweep.clone()
    };
    let mut table = Table::new(&[
        "n",
        "epsilon",
        "c_n",
        "c_2n",
        "t_n",
        "t_n_eps",
        "eps_n_nu",
        "eps_2n_threshold",
        "cbar_n",
        "d",
    ]);
    // Constants are epsilon-free except T_n^eps; estimate once.
    let (_, cert, est) = constants_pipeline(cfg, cfg.model.epsilon)?;
    for &n in &cfg.estimation.n_list {
        for &eps in &eps_values {
            let window = TheoremWindow::new(n, &cert, &est, eps, cfg.certification.nu)?;
            table.push(vec![
                n.to_string(),
                fmt_float(eps),
                fmt_float(window.c_n),
                fmt_float(window.c_2n),
                fmt_float(window.t_n),
                fmt_float(window.t_n_eps),
                fmt_float(window.eps_n_nu),
                fmt_float(window.eps_2n_threshold),
                fmt_float(window.cbar_n),
                fmt_float(window.d_const),
            ]);
        }
    }
    write_out(ctx, "constants.csv", &table.to_csv())?;
    manifest::write(ctx, "constants", 0)?;
    Ok(())
}

/// `simulate`: trajectory summaries and optional rate plots.
pub fn cmd_simulate(ctx: &RunContext) -> Result<(), AppError> {
    let cfg = &ctx.cfg;
    let spec = cfg.spec(cfg.model.epsilon)?;
    let dim = spec.dim();
    let x0 = cfg.simulation.x0.clone().unwrap_or_else(|| vec![0.0; dim]);
    if x0.len() != dim {
        return Err(AppError::Config("simulation.x0 dimension mismatch".into()));
    }
    let method = match cfg.simulation.method.as_str() {
        "euler-maruyama" => SimMethod::EulerMaruyama,
        "solution-formula" => SimMethod::SolutionFormula,
        other => {
            return Err(AppError::Config(format!(
                "unknown simulation method `{other}`"
            )))
        }
    };
    let sim_cfg = OUSimConfig {
        spec: spec.clone(),
        initial: InitialCondition::Fixed(vec![x0]),
        dt: cfg.simulation.dt,
        horizon: cfg.simulation.horizon,
        num_traj: cfg.simulation.num_traj,
        seed: cfg.simulation.seed,
        method,
    };
    let outputs = simulate(&sim_cfg)?;
    let times = &outputs[0].times;
    let steps = times.len() - 1;
    let stride = steps.div_ceil(256).max(1);

    // Pathwise log-Lyapunov rates (1/t) log ||E_{0,t}|| along each
    // trajectory's coefficient path, at the emitted times.
    let emit: Vec<usize> = (0..=steps).step_by(stride).collect();
    let grid: Vec<f64> = times.clone();
    use rayon::prelude::*;
    let rates: Vec<Vec<f64>> = (0..outputs.len() as u64)
        .into_par_iter()
        .map(|traj| {
            let path = sample_coefficient_path(&spec, &grid, cfg.simulation.seed, traj)
                .expect("grid is valid");
            let mut acc = oulab::propagator::Propagator::identity(dim, 0.0);
            let mut out = Vec::with_capacity(emit.len());
            let mut prev_k = 0usize;
            for &k in &emit {
                if k > prev_k {
                    let leg = oulab::propagator::propagate(&path, times[prev_k], times[k], 1e-8)
                        .expect("in-grid");
                    acc = oulab::propagator::compose(&acc, &leg).expect("chained");
                    prev_k = k;
                }
                out.push(if k == 0 {
                    f64::NAN
                } else {
                    acc.log_norm() / times[k]
                });
            }
            out
        })
        .collect();

    let mut table = Table::new(&[
        "t",
        "mean_state_norm",
        "cov_trace",
        "loglyap_q10",
        "loglyap_q50",
        "loglyap_q90",
    ]);
    for (row_idx, &k) in emit.iter().enumerate() {
        let mean_norm = outputs
            .iter()
            .map(|o| o.states[k].iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / outputs.len() as f64;
        let cov = oulab::sde::empirical_covariance(&outputs, k);
        let mut column: Vec<f64> = rates.iter().map(|r| r[row_idx]).collect();
        column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let q = |p: f64| -> f64 {
            if column.is_empty() || column[0].is_nan() {
                f64::NAN
            } else {
                column[((column.len() - 1) as f64 * p).round() as usize]
            }
        };
        table.push(vec![
            fmt_float(times[k]),
            fmt_float(mean_norm),
            fmt_float(cov.trace()),
            fmt_float(q(0.10)),
            fmt_float(q(0.50)),
            fmt_float(q(0.90)),
        ]);
    }
    write_out(ctx, "simulate.csv", &table.to_csv())?;

    if cfg.output.svg {
        let mu_inf = oulab::linalg::log_norm(spec.flow.a_inf());
        let mut plot = svg::LinePlot::new("pathwise log-Lyapunov rate (1/t) log ||E_{0,t}||");
        plot.reference_level(mu_inf / 2.0);
        for r in rates.iter().take(20) {
            let pts: Vec<(f64, f64)> = emit
                .iter()
                .zip(r)
                .filter(|(_, v)| v.is_finite())
                .map(|(&k, &v)| (times[k], v))
                .collect();
            plot.add_series(pts);
        }
        write_out(ctx, "rates.svg", &plot.render())?;
    }
    manifest::write(ctx, "simulate", 0)?;
    Ok(())
}

/// `certify`: run the configured certificates at one epsilon.
pub fn cmd_certify(ctx: &RunContext) -> Result<i32, AppError> {
    let mut table = Table::new(&BOUND_HEADER);
    let violations = certify_into(ctx, ctx.cfg.model.epsilon, &mut table)?;
    write_out(ctx, "certify.csv", &table.to_csv())?;
    manifest::write(ctx, "certify", violations)?;
    Ok(if violations > 0 {
        EXIT_VIOLATED
    } else {
        EXIT_OK
    })
}

/// `sweep`: certify across the epsilon sweep list into one table.
pub fn cmd_sweep(ctx: &RunContext) -> Result<i32, AppError> {
    if ctx.cfg.model.epsilon_sweep.is_empty() {
        return Err(AppError::Config(
            "sweep requires model.epsilon_sweep".into(),
        ));
    }
    let mut table = Table::new(&BOUND_HEADER);
    let mut violations = 0u64;
    for &eps in &ctx.cfg.model.epsilon_sweep {
        violations += certify_into(ctx, eps, &mut table)?;
    }
    write_out(ctx, "sweep.csv", &table.to_csv())?;
    manifest::write(ctx, "sweep", violations)?;
    Ok(if violations > 0 {
        EXIT_VIOLATED
    } else {
        EXIT_OK
    })
}

fn certify_into(ctx: &RunContext, epsilon: f64, table: &mut Table) -> Result<u64, AppError> {
    let cfg = &ctx.cfg;
    let cc = &cfg.certification;
    let (spec, cert, est) = constants_pipeline(cfg, epsilon)?;
    let dim = spec.dim();
    let mut reports: Vec<BoundReport> = Vec::new();
    let mut gates: Vec<(String, u32, String)> = Vec::new();

    let window2 = TheoremWindow::new(2, &cert, &est, epsilon, cc.nu)?;
    for name in &cc.certificates {
        match name.as_str() {
            "averaged-flow" => match certify_averaged_flow(&window2, &spec.flow, cc.s, cc.t) {
                Ok(rep) => reports.push(rep),
                Err(e) => gates.push(("averaged-flow-log-norm".into(), 2, gate_kind(&e)?)),
            },
            "mean-log" => match certify_mean_log(&window2, &spec, cc.s, cc.t, cc.samples) {
                Ok(rep) => reports.push(rep),
                Err(e) => gates.push(("mean-log-norm".into(), 2, gate_kind(&e)?)),
            },
            "event-probability" => {
                for &n in &cfg.estimation.n_list {
                    let window = TheoremWindow::new(n, &cert, &est, epsilon, cc.nu)?;
                    match certify_event_probability(
                        &window, &spec, cc.s, &cc.t_list, cc.h, cc.samples,
                    ) {
                        Ok(rep) => reports.push(rep),
                        Err(e) => {
                            gates.push(("event-failure-probability".into(), n, gate_kind(&e)?))
                        }
                    }
                }
            }
            "moment-window" => {
                for &n in &cfg.estimation.n_list {
                    let window = TheoremWindow::new(n, &cert, &est, epsilon, cc.nu)?;
                    match window_grid(&window, cc.window_points) {
                        Some(t_grid) => {
                            match certify_moment_window(&window, &spec, cc.s, &t_grid, cc.samples) {
                                Ok(mut reps) => reports.append(&mut reps),
                                Err(e) => {
                                    gates.push(("moment-window-rate".into(), n, gate_kind(&e)?))
                                }
                            }
                        }
                        None => gates.push(("moment-window-rate".into(), n, "empty-window".into())),
                    }
                }
            }
            "lemma" => {
                for &n in &cfg.estimation.n_list {
                    let mut reps =
                        certify_lemma(&spec, &est, cc.s, n, &cc.lemma_t_grid, cc.samples)?;
                    reports.append(&mut reps);
                }
            }
            "fluctuation" => {
                for &n in &cfg.estimation.n_list {
                    let window = TheoremWindow::new(n, &cert, &est, epsilon, cc.nu)?;
                    match fluctuation_interval(&window, &cc.eps_list) {
                        Some((s, t)) => {
                            match certify_fluctuation(
                                &window,
                                &spec,
                                s,
                                t,
                                &cc.eps_list,
                                cc.samples,
                            ) {
                                Ok(mut reps) => reports.append(&mut reps),
                                Err(e) => {
                                    gates.push(("fluctuation-ratio".into(), n, gate_kind(&e)?))
                                }
                            }
                        }
                        None => gates.push(("fluctuation-ratio".into(), n, "empty-window".into())),
                    }
                }
            }
            "contraction" => {
                let x1 = cc.x1.clone().unwrap_or_else(|| unit_vec(dim, 0));
                let x2 = cc.x2.clone().unwrap_or_else(|| unit_vec(dim, 1));
                if x1.len() != dim || x2.len() != dim {
                    return Err(AppError::Config(
                        "certification.x1/x2 dimension mismatch".into(),
                    ));
                }
                for &n in &cfg.estimation.n_list {
                    let window = TheoremWindow::new(n, &cert, &est, epsilon, cc.nu)?;
                    match window_grid(&window, cc.window_points) {
                        Some(t_grid) => match certify_contraction(
                            &window, &spec, &x1, &x2, &t_grid, cc.dt, cc.samples,
                        ) {
                            Ok(mut reps) => reports.append(&mut reps),
                            Err(e) => gates.push(("contraction-moment".into(), n, gate_kind(&e)?)),
                        },
                        None => gates.push(("contraction-moment".into(), n, "empty-window".into())),
                    }
                }
            }
            "moment-boundedness" => {
                let x0 = cfg
                    .simulation
                    .x0
                    .clone()
                    .unwrap_or_else(|| unit_vec(dim, 0));
                for &n in &cfg.estimation.n_list {
                    let window = TheoremWindow::new(n, &cert, &est, epsilon, cc.nu)?;
                    match boundedness_grid(&window, cc.window_points) {
                        Some(t_grid) => match certify_moment_boundedness(
                            &window, &spec, &x0, &t_grid, cc.dt, cc.samples,
                        ) {
                            Ok(out) => {
                                let trend = trend_report(n, epsilon, &out);
                                reports.extend(out.reports);
                                reports.push(trend);
                            }
                            Err(e) => {
                                gates.push(("moment-boundedness-kappa".into(), n, gate_kind(&e)?))
                            }
                        },
                        None => gates.push((
                            "moment-boundedness-kappa".into(),
                            n,
                            "empty-window".into(),
                        )),
                    }
                }
            }
            "as-lyapunov" => {
                for &n in &cfg.estimation.n_list {
                    let window = TheoremWindow::new(n, &cert, &est, epsilon, cc.nu)?;
                    let out = certify_as_lyapunov(
                        &window,
                        &spec,
                        cc.s,
                        &cc.t_list,
                        &cc.eps_list,
                        cc.samples,
                    )?;
                    let slope = out.slope_report();
                    reports.extend(out.reports);
                    reports.push(slope);
                }
            }
            other => return Err(AppError::Config(format!("unknown certificate `{other}`"))),
        }
    }

    // Test hook: corrupt every bound, then recompute the verdicts.
    if std::env::var(ZERO_BOUND_ENV)
        .map(|v| !v.is_empty())
        .unwrap_or(false)
    {
        for rep in &mut reports {
            rep.bound = 0.0;
            rep.margin = rep.bound - (rep.estimate + 3.0 * rep.stderr);
            rep.verdict = if rep.estimate + 3.0 * rep.stderr <= rep.bound {
                Verdict::Certified
            } else if rep.estimate - 3.0 * rep.stderr > rep.bound {
                Verdict::Violated
            } else {
                Verdict::Inconclusive
            };
        }
    }

    let mut violations = 0u64;
    for rep in &reports {
        if rep.verdict == Verdict::Violated {
            violations += 1;
        }
        push_report(table, rep);
    }
    for (quantity, n, kind) in &gates {
        push_gate_row(table, quantity, *n, epsilon, kind);
    }
    Ok(violations)
}

fn gate_kind(e: &oulab::Error) -> Result<String, AppError> {
    match e {
        oulab::Error::GateUnsatisfied { .. } => Ok("gate-unsatisfied".into()),
        oulab::Error::EmptyWindow { .. } => Ok("empty-window".into()),
        other => Err(AppError::Runtime(other.to_string())),
    }
}

fn unit_vec(dim: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if dim == 1 {
        v[0] = if axis == 0 { 1.0 } else { -1.0 };
    } else {
        v[axis.min(dim - 1)] = 1.0;
    }
    v
}

/// Interior grid of the window `[T_n, T_n^eps]`; `None` when empty. An
/// unbounded window (epsilon = 0) is truncated to span 5 time units.
fn window_grid(window: &TheoremWindow, points: usize) -> Option<Vec<f64>> {
    if !window.window_nonempty() || window.epsilon > window.eps_2n_threshold {
        return None;
    }
    let lo = window.t_n;
    let hi = if window.t_n_eps.is_finite() {
        window.t_n_eps
    } else {
        lo + 5.0
    };
    Some(linspace_interior(lo, hi, points))
}

fn boundedness_grid(window: &TheoremWindow, points: usize) -> Option<Vec<f64>> {
    let c_4n = window.c_4n?;
    let t_2n = oulab::stability::compute_tn(2 * window.n, window.c0, c_4n);
    let lo = window.t_n.max(t_2n);
    let t_2n_eps = match oulab::stability::compute_tn_eps(
        2 * window.n,
        window.epsilon,
        window.c0,
        window.d1,
        window.d2,
    ) {
        Ok((v, _)) => v,
        Err(_) => 0.0,
    };
    if lo >= t_2n_eps {
        return None;
    }
    let hi = if t_2n_eps.is_finite() {
        t_2n_eps
    } else {
        lo + 5.0
    };
    Some(linspace_interior(lo, hi, points))
}

fn fluctuation_interval(window: &TheoremWindow, eps_list: &[f64]) -> Option<(f64, f64)> {
    let eps_max = eps_list.iter().cloned().fold(0.0f64, f64::max);
    let c_4n = window.c_4n?;
    let t_2n = oulab::stability::compute_tn(2 * window.n, window.c0, c_4n);
    let t_2n_eps = match oulab::stability::compute_tn_eps(
        2 * window.n,
        eps_max,
        window.c0,
        window.d1,
        window.d2,
    ) {
        Ok((v, _)) => v,
        Err(_) => 0.0,
    };
    if t_2n >= t_2n_eps {
        return None;
    }
    let hi = if t_2n_eps.is_finite() {
        t_2n_eps
    } else {
        t_2n + 5.0
    };
    let pad = (hi - t_2n) * 1e-3;
    Some((t_2n + pad, hi - pad))
}

fn linspace_interior(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let p = points.max(1);
    let pad = (hi - lo) * 1e-3;
    let (a, b) = (lo + pad, hi - pad);
    if p == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..p)
        .map(|i| a + (b - a) * i as f64 / (p - 1) as f64)
        .collect()
}

fn trend_report(
    n: u32,
    epsilon: f64,
    out: &oulab::stability::MomentBoundednessReport,
) -> BoundReport {
    BoundReport {
        quantity: "moment-boundedness-trend".into(),
        n: Some(n),
        epsilon: Some(epsilon),
        t: None,
        bound: 0.0,
        estimate: out.trend_slope,
        stderr: out.trend_slope_se,
        samples: 0,
        // Two-sided rule: the 3-SE slope interval must contain zero.
        verdict: if out.trend_flat {
            Verdict::Certified
        } else {
            Verdict::Violated
        },
        margin: 3.0 * out.trend_slope_se - out.trend_slope.abs(),
    }
}
