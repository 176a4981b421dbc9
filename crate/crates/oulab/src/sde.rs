//! Simulation of the linear SDE `dX = A_t^e X dt + (B_t^e)^{1/2} dW` by two
//! routes: direct Euler-Maruyama and the variation-of-constants formula with
//! one-step RK4 propagators. Both routes share the same noise stream per
//! trajectory, so they can be coupled pathwise.
//!
//! Coefficient randomness and Wiener noise come from disjoint stream
//! domains; that separation is the executable form of the model's
//! independence requirement between `(A^e, B^e)` and `(X_0, W)`.

use crate::coeffs::{sample_coefficient_path, CoefficientProcessSpec, PathRealization};
use crate::error::{Error, Result};
use crate::linalg::{principal_sqrt, spectral_norm, PsdMatrix, SquareMatrix};
use crate::rng::{derive_stream, standard_normal, StreamDomain};
use rayon::prelude::*;

/// Initial condition: a fixed list cycled over trajectories, or a Gaussian.
#[derive(Debug, Clone)]
pub enum InitialCondition {
    Fixed(Vec<Vec<f64>>),
    Gaussian { mean: Vec<f64>, cov: PsdMatrix },
}

/// Integration route.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMethod {
    EulerMaruyama,
    SolutionFormula,
}

/// Simulation configuration.
#[derive(Debug, Clone)]
pub struct OUSimConfig {
    pub spec: CoefficientProcessSpec,
    pub initial: InitialCondition,
    pub dt: f64,
    pub horizon: f64,
    pub num_traj: usize,
    pub seed: u64,
    pub method: SimMethod,
}

impl OUSimConfig {
    pub fn validate(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.num_traj == 0 {
            return Err(Error::InvalidInput(
                "dt, horizon, num_traj must be positive".into(),
            ));
        }
        let steps_f = self.horizon / self.dt;
        let steps = steps_f.round();
        if (steps_f - steps).abs() > 1e-12 * steps.max(1.0) || steps < 1.0 {
            return Err(Error::InvalidInput(
                "horizon must be an integer multiple of dt".into(),
            ));
        }
        match &self.initial {
            InitialCondition::Fixed(list) => {
                if list.is_empty() || list.iter().any(|v| v.len() != self.spec.dim()) {
                    return Err(Error::InvalidInput(
                        "initial states must match the model dimension".into(),
                    ));
                }
            }
            InitialCondition::Gaussian { mean, cov } => {
                if mean.len() != self.spec.dim() || cov.dim() != self.spec.dim() {
                    return Err(Error::InvalidInput(
                        "initial law must match the model dimension".into(),
                    ));
                }
            }
        }
        Ok(steps as usize)
    }
}

/// One simulated trajectory, with its stream bookkeeping.
#[derive(Debug, Clone)]
pub struct TrajectoryOutput {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub coefficient_stream_id: u64,
    pub noise_stream_id: u64,
}

fn initial_state(cfg: &OUSimConfig, traj: u64) -> Vec<f64> {
    match &cfg.initial {
        InitialCondition::Fixed(list) => list[traj as usize % list.len()].clone(),
        InitialCondition::Gaussian { mean, cov } => {
            let mut rng = derive_stream(cfg.seed, traj, StreamDomain::InitialState, 0);
            let root = principal_sqrt(cov).expect("initial covariance is PSD by construction");
            let z: Vec<f64> = (0..mean.len()).map(|_| standard_normal(&mut rng)).collect();
            let rz = root.matrix().mul_vec(&z);
            mean.iter().zip(rz).map(|(m, v)| m + v).collect()
        }
    }
}

fn check_step(dt: f64, path: &PathRealization) -> Result<()> {
    let norm: f64 = path
        .a_values()
        .iter()
        .map(spectral_norm)
        .fold(0.0, f64::max);
    let max_dt = 0.5 / norm.max(1e-12);
    if dt > max_dt {
        return Err(Error::StepTooLarge { dt, norm, max_dt });
    }
    Ok(())
}

fn sqrt_b_cache(path: &PathRealization) -> Result<Vec<SquareMatrix>> {
    path.b_values()
        .iter()
        .map(|b| {
            let psd = PsdMatrix::new(crate::linalg::sym_part(b))?;
            Ok(principal_sqrt(&psd)?.into_matrix())
        })
        .collect()
}

/// Simulate `num_traj` trajectories. Each trajectory owns one coefficient
/// path (from the coefficient stream domain) and one noise stream; results
/// are index-ordered, so output never depends on scheduling.
pub fn simulate(cfg: &OUSimConfig) -> Result<Vec<TrajectoryOutput>> {
    let steps = cfg.validate()?;
    let grid: Vec<f64> = (0..=steps).map(|k| cfg.dt * k as f64).collect();
    (0..cfg.num_traj as u64)
        .into_par_iter()
        .map(|traj| simulate_one(cfg, &grid, traj))
        .collect()
}

/// Euler-Maruyama route for the whole batch.
pub fn simulate_em(cfg: &OUSimConfig) -> Result<Vec<TrajectoryOutput>> {
    let mut cfg = cfg.clone();
    cfg.method = SimMethod::EulerMaruyama;
    simulate(&cfg)
}

/// Variation-of-constants route for the whole batch.
pub fn simulate_formula(cfg: &OUSimConfig) -> Result<Vec<TrajectoryOutput>> {
    let mut cfg = cfg.clone();
    cfg.method = SimMethod::SolutionFormula;
    simulate(&cfg)
}

fn simulate_one(cfg: &OUSimConfig, grid: &[f64], traj: u64) -> Result<TrajectoryOutput> {
    let r = cfg.spec.dim();
    let path = sample_coefficient_path(&cfg.spec, grid, cfg.seed, traj)?;
    check_step(cfg.dt, &path)?;
    let roots = sqrt_b_cache(&path)?;
    let mut noise = derive_stream(cfg.seed, traj, StreamDomain::Noise, 0);
    let mut x = initial_state(cfg, traj);
    let mut states = Vec::with_capacity(grid.len());
    states.push(x.clone());
    let sqrt_dt = cfg.dt.sqrt();
    for k in 0..grid.len() - 1 {
        let xi: Vec<f64> = (0..r).map(|_| standard_normal(&mut noise)).collect();
        let shock = roots[k].mul_vec(&xi);
        match cfg.method {
            SimMethod::EulerMaruyama => {
                // Ito left-endpoint evaluation of the coefficients.
                let drift = path.a_values()[k].mul_vec(&x);
                for i in 0..r {
                    x[i] += drift[i] * cfg.dt + shock[i] * sqrt_dt;
                }
            }
            SimMethod::SolutionFormula => {
                // X_{k+1} = Phi_k X_k + B_k^{1/2} sqrt(dt) xi_k where Phi_k
                // is the one-step propagator; unrolling the recursion gives
                // exactly E_{0,t} x0 + sum_k E_{t_k,t} B_k^{1/2} sqrt(dt) xi_k.
                let phi = one_step_propagator(&path, k, cfg.dt);
                let moved = phi.mul_vec(&x);
                for i in 0..r {
                    x[i] = moved[i] + shock[i] * sqrt_dt;
                }
            }
        }
        states.push(x.clone());
    }
    Ok(TrajectoryOutput {
        times: grid.to_vec(),
        states,
        coefficient_stream_id: traj,
        noise_stream_id: traj,
    })
}

/// RK4 propagator over one grid step `[t_k, t_{k+1}]`.
fn one_step_propagator(path: &PathRealization, k: usize, dt: f64) -> SquareMatrix {
    use crate::flows::MatrixFlow;
    let t0 = path.grid()[k];
    let seg_mid = t0 + 0.5 * dt;
    let a_lo = path.value_in_segment(t0, seg_mid).unwrap();
    let a_mid = path.value_in_segment(seg_mid, seg_mid).unwrap();
    let a_hi = path.value_in_segment(t0 + dt, seg_mid).unwrap();
    let mut y = SquareMatrix::identity(path.dim());
    let k1 = a_lo.matmul(&y);
    let k2 = a_mid.matmul(&y.add(&k1.scale(0.5 * dt)));
    let k3 = a_mid.matmul(&y.add(&k2.scale(0.5 * dt)));
    let k4 = a_hi.matmul(&y.add(&k3.scale(dt)));
    y = y.add(
        &k1.add(&k2.scale(2.0))
            .add(&k3.scale(2.0))
            .add(&k4)
            .scale(dt / 6.0),
    );
    y
}

/// Conditional covariance at grid time `t` for a frozen coefficient path:
/// `E_t C0 E_t' + sum_k E_{t_k,t} B_k E_{t_k,t}' dt` (left-endpoint sum).
pub fn conditional_covariance(path: &PathRealization, c0: &PsdMatrix, t: f64) -> Result<PsdMatrix> {
    let idx = path
        .grid()
        .iter()
        .position(|g| (g - t).abs() <= 1e-12 * (1.0 + t.abs()))
        .ok_or_else(|| Error::InvalidInput(format!("t = {t} is not a grid node")))?;
    if c0.dim() != path.dim() {
        return Err(Error::InvalidInput(
            "C0 must match the path dimension".into(),
        ));
    }
    let mut cov = c0.matrix().clone();
    for k in 0..idx {
        let dt = path.grid()[k + 1] - path.grid()[k];
        let phi = one_step_propagator(path, k, dt);
        cov = phi.matmul(&cov).matmul(&phi.transpose());
        for i in 0..path.dim() {
            for j in 0..path.dim() {
                cov[(i, j)] += path.b_values()[k][(i, j)] * dt;
            }
        }
    }
    PsdMatrix::new(crate::linalg::sym_part(&cov))
}

/// Pathwise distance of two trajectories driven by the same coefficient path
/// and the same noise. Additive noise cancels exactly in the difference, so
/// the difference is evolved directly: the output is independent of `B`
/// bit-for-bit, and equals `||E_{0,t}(A^e)(x1 - x2)||`.
pub fn coupled_pair(cfg: &OUSimConfig, x1: &[f64], x2: &[f64]) -> Result<Vec<Vec<f64>>> {
    let steps = cfg.validate()?;
    if x1.len() != cfg.spec.dim() || x2.len() != cfg.spec.dim() {
        return Err(Error::InvalidInput(
            "pair states must match the model dimension".into(),
        ));
    }
    if x1 == x2 {
        // Identical starts: identically zero difference.
        return Ok(vec![vec![0.0; steps + 1]; cfg.num_traj]);
    }
    let grid: Vec<f64> = (0..=steps).map(|k| cfg.dt * k as f64).collect();
    (0..cfg.num_traj as u64)
        .into_par_iter()
        .map(|traj| {
            let path = sample_coefficient_path(&cfg.spec, &grid, cfg.seed, traj)?;
            check_step(cfg.dt, &path)?;
            let mut d: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| a - b).collect();
            let mut norms = Vec::with_capacity(grid.len());
            norms.push(vec_norm(&d));
            for k in 0..steps {
                match cfg.method {
                    SimMethod::EulerMaruyama => {
                        let drift = path.a_values()[k].mul_vec(&d);
                        for i in 0..d.len() {
                            d[i] += drift[i] * cfg.dt;
                        }
                    }
                    SimMethod::SolutionFormula => {
                        let phi = one_step_propagator(&path, k, cfg.dt);
                        d = phi.mul_vec(&d);
                    }
                }
                norms.push(vec_norm(&d));
            }
            Ok(norms)
        })
        .collect()
}

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Trajectory dump: the coefficient path in the columnar binary layout with
/// the state vectors appended (K+1 r-vectors, f64 little-endian).
pub fn write_trajectory(
    path: &PathRealization,
    traj: &TrajectoryOutput,
    out: &mut impl std::io::Write,
) -> std::io::Result<()> {
    crate::coeffs::write_path(path, out)?;
    for state in &traj.states {
        for v in state {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a trajectory dump written by [`write_trajectory`].
pub fn read_trajectory(
    input: &mut impl std::io::Read,
    interpolation: crate::coeffs::Interpolation,
) -> std::io::Result<(PathRealization, TrajectoryOutput)> {
    let path = crate::coeffs::read_path(input, interpolation)?;
    let r = path.dim();
    let mut states = Vec::with_capacity(path.grid().len());
    for _ in 0..path.grid().len() {
        let mut v = Vec::with_capacity(r);
        for _ in 0..r {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            v.push(f64::from_le_bytes(b));
        }
        states.push(v);
    }
    let times = path.grid().to_vec();
    Ok((
        path,
        TrajectoryOutput {
            times,
            states,
            coefficient_stream_id: 0,
            noise_stream_id: 0,
        },
    ))
}

/// Empirical mean state at a time index across trajectories.
pub fn empirical_mean(outputs: &[TrajectoryOutput], k: usize) -> Vec<f64> {
    let r = outputs[0].states[0].len();
    let mut mean = vec![0.0; r];
    for out in outputs {
        for i in 0..r {
            mean[i] += out.states[k][i];
        }
    }
    mean.iter_mut().for_each(|v| *v /= outputs.len() as f64);
    mean
}

/// Empirical covariance at a time index across trajectories.
pub fn empirical_covariance(outputs: &[TrajectoryOutput], k: usize) -> SquareMatrix {
    let r = outputs[0].states[0].len();
    let mean = empirical_mean(outputs, k);
    let mut cov = SquareMatrix::zeros(r);
    for out in outputs {
        for i in 0..r {
            let di = out.states[k][i] - mean[i];
            for j in 0..r {
                cov[(i, j)] += di * (out.states[k][j] - mean[j]);
            }
        }
    }
    cov.scale(1.0 / (outputs.len().max(2) - 1) as f64)
}
