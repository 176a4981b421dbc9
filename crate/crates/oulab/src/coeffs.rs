//! Generative models for the random coefficient processes `(A_t^e, B_t^e)`
//! and empirical estimation of the moment constants they satisfy.
//!
//! The drift decomposes as `A_t^e = A_t + e * DA_t` where `A_t` is a
//! deterministic flow and `DA_t` is one of three zero-mean perturbation
//! kinds. Since the law of `DA` is free of `e`, the moment constants
//!
//! ```text
//! c_n   ~ sup_t E(||DA_t||^n)^{1/n}
//! d1,d2 :  sup_t E(||A_t^e||^n)^{1/n} <= d1 + e d2 sqrt(n)
//! rho_n ~ sup_t E[tr(B_t^e)^n]^{1/n}
//! ```
//!
//! are estimated by a grid max over a finite horizon; the report carries the
//! horizon and grid so the surrogate is explicit.

use crate::error::{Error, Result};
use crate::flows::H0Flow;
use crate::linalg::{spectral_norm, sym_part, PsdMatrix, SquareMatrix};
use crate::rng::{derive_stream, standard_normal, StreamDomain};

/// Zero-mean perturbation process for the drift coefficient.
#[derive(Debug, Clone)]
pub enum PerturbationModel {
    /// Independent stationary OU processes per entry:
    /// mean-reversion `theta`, volatility `sigma`, stationary entry
    /// std `sigma / sqrt(2 theta)`.
    EntrywiseOu { theta: f64, sigma: f64 },
    /// Matrix redrawn (iid N(0, sigma_j^2) entries) at Poisson(lambda) jump
    /// times, constant in between.
    PiecewiseConstantJump { lambda: f64, sigma_j: f64 },
    /// One N(0, sigma_f^2) entrywise draw at t = 0, constant thereafter.
    FrozenGaussian { sigma_f: f64 },
}

impl PerturbationModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            PerturbationModel::EntrywiseOu { theta, sigma } => *theta > 0.0 && *sigma > 0.0,
            PerturbationModel::PiecewiseConstantJump { lambda, sigma_j } => {
                *lambda > 0.0 && *sigma_j > 0.0
            }
            PerturbationModel::FrozenGaussian { sigma_f } => *sigma_f > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "perturbation parameters must be strictly positive".into(),
            ))
        }
    }
}

/// Diffusion coefficient model; every realization is PSD by construction.
#[derive(Debug, Clone)]
pub enum DiffusionModel {
    /// `B_t = B0` for a fixed PSD matrix.
    ConstantPsd { b0: PsdMatrix },
    /// `B_t = beta (I + gamma sym(A_t^e)^2)`.
    DriftCoupled { beta: f64, gamma: f64 },
}

impl DiffusionModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            DiffusionModel::ConstantPsd { .. } => Ok(()),
            DiffusionModel::DriftCoupled { beta, gamma } => {
                if *beta >= 0.0 && *gamma >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(
                        "drift-coupled diffusion needs beta, gamma >= 0".into(),
                    ))
                }
            }
        }
    }

    fn realize(&self, a_eps: &SquareMatrix) -> SquareMatrix {
        match self {
            DiffusionModel::ConstantPsd { b0 } => b0.matrix().clone(),
            DiffusionModel::DriftCoupled { beta, gamma } => {
                let s = sym_part(a_eps);
                SquareMatrix::identity(a_eps.dim())
                    .add(&s.matmul(&s).scale(*gamma))
                    .scale(*beta)
            }
        }
    }
}

/// Full coefficient-process specification `A_t^e = A_t + e DA_t`, `B_t^e`.
#[derive(Debug, Clone)]
pub struct CoefficientProcessSpec {
    pub flow: H0Flow,
    pub perturbation: PerturbationModel,
    pub diffusion: DiffusionModel,
    pub epsilon: f64,
}

impl CoefficientProcessSpec {
    pub fn new(
        flow: H0Flow,
        perturbation: PerturbationModel,
        diffusion: DiffusionModel,
        epsilon: f64,
    ) -> Result<Self> {
        perturbation.validate()?;
        diffusion.validate()?;
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidInput("epsilon must lie in [0, 1]".into()));
        }
        Ok(Self {
            flow,
            perturbation,
            diffusion,
            epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        use crate::flows::MatrixFlow;
        self.flow.dim()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(
            self.flow.clone(),
            self.perturbation.clone(),
            self.diffusion.clone(),
            epsilon,
        )
    }

    /// Rebuild a realization at a different `epsilon` from a realization
    /// sampled at `epsilon = 1`, sharing the perturbation draws. Drift values
    /// become `A_t + epsilon * DA_t` and the diffusion re-realizes against
    /// the rescaled drift.
    pub fn rescale_unit_path(&self, unit_path: &PathRealization, epsilon: f64) -> PathRealization {
        let mut a_values = Vec::with_capacity(unit_path.grid.len());
        let mut b_values = Vec::with_capacity(unit_path.grid.len());
        for (k, t) in unit_path.grid.iter().enumerate() {
            let a_det = self.flow.eval(*t);
            let delta = unit_path.a_values[k].sub(&a_det);
            let a_eps = a_det.add(&delta.scale(epsilon));
            let b_eps = self.diffusion.realize(&a_eps);
            a_values.push(a_eps);
            b_values.push(b_eps);
        }
        PathRealization {
            grid: unit_path.grid.clone(),
            a_values,
            b_values,
            interpolation: unit_path.interpolation,
            seed: unit_path.seed,
            stream_id: unit_path.stream_id,
        }
    }
}

/// How the grid samples are read between nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// Piecewise-linear (smooth perturbation kinds).
    Linear,
    /// Left limits between nodes (jump kind).
    LeftConstant,
}

/// One grid realization of the coefficient pair.
#[derive(Debug, Clone)]
pub struct PathRealization {
    grid: Vec<f64>,
    a_values: Vec<SquareMatrix>,
    b_values: Vec<SquareMatrix>,
    interpolation: Interpolation,
    pub seed: u64,
    pub stream_id: u64,
}

impl PathRealization {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn a_values(&self) -> &[SquareMatrix] {
        &self.a_values
    }

    pub fn b_values(&self) -> &[SquareMatrix] {
        &self.b_values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn dim(&self) -> usize {
        self.a_values[0].dim()
    }

    /// Drift value between nodes, following the path's interpolation rule.
    pub fn value_at(&self, t: f64) -> Result<SquareMatrix> {
        let end = *self.grid.last().unwrap();
        if t < 0.0 || t > end * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::GridExceeded { t, start: 0.0, end });
        }
        let t = t.min(end);
        let k = match self.grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            Ok(k) => return Ok(self.a_values[k].clone()),
            Err(k) => k - 1,
        };
        match self.interpolation {
            Interpolation::LeftConstant => Ok(self.a_values[k].clone()),
            Interpolation::Linear => {
                let (t0, t1) = (self.grid[k], self.grid[k + 1]);
                let w = (t - t0) / (t1 - t0);
                Ok(self.a_values[k]
                    .scale(1.0 - w)
                    .add(&self.a_values[k + 1].scale(w)))
            }
        }
    }
}

impl crate::flows::MatrixFlow for PathRealization {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn value_at(&self, t: f64) -> Result<SquareMatrix> {
        PathRealization::value_at(self, t)
    }

    fn end_time(&self) -> Option<f64> {
        self.grid.last().copied()
    }

    fn norm_bound(&self, s: f64, t: f64) -> f64 {
        // Node values bound both interpolation modes on every touched
        // segment, so take the max over interior nodes plus the nodes of the
        // partial boundary segments.
        let mut best: f64 = 0.0;
        for (g, v) in self.grid.iter().zip(&self.a_values) {
            if *g >= s - 1e-12 && *g <= t + 1e-12 {
                best = best.max(spectral_norm(v));
            }
        }
        let lo = self.segment_index(s);
        let hi = self.segment_index(t);
        for k in [lo, hi] {
            best = best.max(spectral_norm(&self.a_values[k]));
            if k + 1 < self.a_values.len() {
                best = best.max(spectral_norm(&self.a_values[k + 1]));
            }
        }
        best
    }

    fn breakpoints(&self, s: f64, t: f64) -> Vec<f64> {
        self.grid
            .iter()
            .copied()
            .filter(|&g| g > s && g < t)
            .collect()
    }

    fn value_in_segment(&self, t: f64, seg_mid: f64) -> Result<SquareMatrix> {
        let k = self.segment_index(seg_mid);
        match self.interpolation {
            Interpolation::LeftConstant => Ok(self.a_values[k].clone()),
            Interpolation::Linear => {
                let (t0, t1) = (self.grid[k], self.grid[k + 1]);
                let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                Ok(self.a_values[k]
                    .scale(1.0 - w)
                    .add(&self.a_values[k + 1].scale(w)))
            }
        }
    }
}

impl PathRealization {
    fn segment_index(&self, t: f64) -> usize {
        match self.grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            Ok(k) => k.min(self.grid.len() - 2),
            Err(k) => k.saturating_sub(1).min(self.grid.len() - 2),
        }
    }
}

/// Strictly increasing grid starting at 0.
pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    assert!(horizon > 0.0 && steps >= 1);
    (0..=steps)
        .map(|k| horizon * k as f64 / steps as f64)
        .collect()
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid[0] != 0.0 {
        return Err(Error::InvalidInput(
            "grid must start at 0 with >= 2 nodes".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("grid must strictly increase".into()));
    }
    Ok(())
}

/// Sample one realization of `(A^e, B^e)` on `grid`.
///
/// Reproducible: identical `(spec, grid, seed, stream_id)` give bit-identical
/// output regardless of execution order. The entrywise OU kind uses the exact
/// Gaussian transition (no discretization bias); jumps use exponential
/// clocks; the frozen kind draws once at t = 0.
pub fn sample_coefficient_path(
    spec: &CoefficientProcessSpec,
    grid: &[f64],
    seed: u64,
    stream_id: u64,
) -> Result<PathRealization> {
    validate_grid(grid)?;
    let r = spec.dim();
    let k_max = grid.len();
    let mut deltas: Vec<SquareMatrix> = vec![SquareMatrix::zeros(r); k_max];
    let interpolation = match &spec.perturbation {
        PerturbationModel::PiecewiseConstantJump { .. } => Interpolation::LeftConstant,
        _ => Interpolation::Linear,
    };
    match &spec.perturbation {
        PerturbationModel::FrozenGaussian { sigma_f } => {
            let mut rng = derive_stream(seed, stream_id, StreamDomain::CoefficientEntry, 0);
            let mut draw = SquareMatrix::zeros(r);
            for i in 0..r {
                for j in 0..r {
                    draw[(i, j)] = sigma_f * standard_normal(&mut rng);
                }
            }
            for d in deltas.iter_mut() {
                *d = draw.clone();
            }
        }
        PerturbationModel::EntrywiseOu { theta, sigma } => {
            let stat_std = sigma / (2.0 * theta).sqrt();
            for i in 0..r {
                for j in 0..r {
                    let lane = (i * r + j) as u64;
                    let mut rng =
                        derive_stream(seed, stream_id, StreamDomain::CoefficientEntry, lane);
                    let mut x = stat_std * standard_normal(&mut rng);
                    deltas[0][(i, j)] = x;
                    for k in 1..k_max {
                        let dt = grid[k] - grid[k - 1];
                        let decay = (-theta * dt).exp();
                        let trans_std = stat_std * (1.0 - decay * decay).sqrt();
                        x = decay * x + trans_std * standard_normal(&mut rng);
                        deltas[k][(i, j)] = x;
                    }
                }
            }
        }
        PerturbationModel::PiecewiseConstantJump { lambda, sigma_j } => {
            let mut clock = derive_stream(seed, stream_id, StreamDomain::JumpClock, 0);
            let mut entries = derive_stream(seed, stream_id, StreamDomain::CoefficientEntry, 0);
            let draw_matrix = |rng: &mut rand_chacha::ChaCha12Rng| {
                let mut m = SquareMatrix::zeros(r);
                for i in 0..r {
                    for j in 0..r {
                        m[(i, j)] = sigma_j * standard_normal(rng);
                    }
                }
                m
            };
            let horizon = *grid.last().unwrap();
            let mut current = draw_matrix(&mut entries);
            let mut next_jump = exponential(&mut clock, *lambda);
            let mut k = 0usize;
            while k < k_max {
                if grid[k] < next_jump || next_jump > horizon {
                    deltas[k] = current.clone();
                    k += 1;
                } else {
                    current = draw_matrix(&mut entries);
                    next_jump += exponential(&mut clock, *lambda);
                }
            }
        }
    }
    let mut a_values = Vec::with_capacity(k_max);
    let mut b_values = Vec::with_capacity(k_max);
    for (k, t) in grid.iter().enumerate() {
        let a_det = spec.flow.eval(*t);
        let a_eps = a_det.add(&deltas[k].scale(spec.epsilon));
        let b_eps = spec.diffusion.realize(&a_eps);
        a_values.push(a_eps);
        b_values.push(b_eps);
    }
    Ok(PathRealization {
        grid: grid.to_vec(),
        a_values,
        b_values,
        interpolation,
        seed,
        stream_id,
    })
}

fn exponential(rng: &mut rand_chacha::ChaCha12Rng, rate: f64) -> f64 {
    use rand::Rng;
    let u: f64 = rng.random::<f64>();
    -(1.0 - u).ln() / rate
}

/// Estimated moment constants, with the horizon/grid surrogate recorded.
#[derive(Debug, Clone, Default)]
pub struct HypothesisEstimates {
    pub n_list: Vec<u32>,
    /// `c_n` estimates, non-decreasing in n (running-max isotonic step).
    pub c_n_hat: Vec<f64>,
    /// Standard error of each raw `c_n` at its argmax grid time.
    pub c_n_stderr: Vec<f64>,
    pub d1_hat: f64,
    pub d2_hat: f64,
    /// Raw `sup_t E(||A^e||^n)^{1/n}` per n, before the (d1, d2) fit.
    pub h2_raw: Vec<f64>,
    pub rho_n_hat: Vec<f64>,
    /// Declared validity thresholds (default 1 for the built-in kinds).
    pub eps_n: Vec<f64>,
    pub sample_count: usize,
    pub grid_horizon: f64,
}

impl HypothesisEstimates {
    /// Merge fields filled by the separate estimators.
    pub fn merge(mut self, other: HypothesisEstimates) -> HypothesisEstimates {
        if self.n_list.is_empty() {
            self.n_list = other.n_list;
        }
        if self.c_n_hat.is_empty() {
            self.c_n_hat = other.c_n_hat;
            self.c_n_stderr = other.c_n_stderr;
        }
        if self.h2_raw.is_empty() {
            self.d1_hat = other.d1_hat;
            self.d2_hat = other.d2_hat;
            self.h2_raw = other.h2_raw;
        }
        if self.rho_n_hat.is_empty() {
            self.rho_n_hat = other.rho_n_hat;
        }
        if self.eps_n.is_empty() {
            self.eps_n = other.eps_n;
        }
        self.sample_count = self.sample_count.max(other.sample_count);
        self.grid_horizon = self.grid_horizon.max(other.grid_horizon);
        self
    }

    pub fn c_for(&self, n: u32) -> Option<f64> {
        self.n_list
            .iter()
            .position(|&m| m == n)
            .map(|i| self.c_n_hat[i])
    }

    pub fn eps_for(&self, n: u32) -> f64 {
        self.n_list
            .iter()
            .position(|&m| m == n)
            .map(|i| self.eps_n[i])
            .unwrap_or(1.0)
    }
}

fn check_estimation_inputs(n_list: &[u32], samples: usize, grid: &[f64]) -> Result<()> {
    if samples < 100 {
        return Err(Error::InvalidInput(
            "estimation needs samples >= 100".into(),
        ));
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::InvalidInput(
            "n_list must contain positive orders".into(),
        ));
    }
    validate_grid(grid)
}

/// Estimate the `c_n` constants of the drift perturbation:
/// `c_n ~ max over grid times of E(||DA_t||^n)^{1/n}`.
pub fn estimate_h1_constants(
    spec: &CoefficientProcessSpec,
    n_list: &[u32],
    samples: usize,
    grid: &[f64],
) -> Result<HypothesisEstimates> {
    check_estimation_inputs(n_list, samples, grid)?;
    if spec.epsilon <= 0.0 {
        return Err(Error::InvalidInput(
            "estimate_h1_constants needs epsilon > 0".into(),
        ));
    }
    // ||A_t - A_t^e|| = e ||DA_t||, so work with DA directly (law is e-free).
    let unit = spec.with_epsilon(1.0)?;
    let flow_values: Vec<SquareMatrix> = grid.iter().map(|t| spec.flow.eval(*t)).collect();
    let k_max = grid.len();
    // moment_sums[ni][k] accumulates ||DA_{t_k}||^n over samples.
    let per_sample: Vec<Vec<Vec<f64>>> = run_samples(samples, |s| {
        let path = sample_coefficient_path(&unit, grid, s.seed, s.index).unwrap();
        let mut rows = vec![vec![0.0; k_max]; n_list.len()];
        for k in 0..k_max {
            let delta = path.a_values()[k].sub(&flow_values[k]);
            let norm = spectral_norm(&delta);
            for (ni, &n) in n_list.iter().enumerate() {
                rows[ni][k] = norm.powi(n as i32);
            }
        }
        rows
    });
    let mut c_raw = Vec::with_capacity(n_list.len());
    let mut c_se = Vec::with_capacity(n_list.len());
    for (ni, &n) in n_list.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut best_se = 0.0;
        for k in 0..k_max {
            let (mean, var) = mean_var(per_sample.iter().map(|rows| rows[ni][k]));
            let root = mean.max(0.0).powf(1.0 / n as f64);
            if root > best {
                best = root;
                // Delta method: d/dm m^{1/n} = m^{1/n - 1} / n.
                best_se = if mean > 0.0 {
                    (var / samples as f64).sqrt() * root / (n as f64 * mean)
                } else {
                    0.0
                };
            }
        }
        c_raw.push(best);
        c_se.push(best_se);
    }
    // Isotonic step: moment norms are non-decreasing in n; enforce by
    // running max so the certified constants stay conservative.
    let mut c_iso = c_raw.clone();
    for i in 1..c_iso.len() {
        if c_iso[i] < c_iso[i - 1] {
            c_iso[i] = c_iso[i - 1];
        }
    }
    Ok(HypothesisEstimates {
        n_list: n_list.to_vec(),
        c_n_hat: c_iso,
        c_n_stderr: c_se,
        eps_n: vec![1.0; n_list.len()],
        sample_count: samples,
        grid_horizon: *grid.last().unwrap(),
        ..Default::default()
    })
}

/// Fit `(d1, d2)` in `sup_t E(||A^e_t||^n)^{1/n} <= d1 + e d2 sqrt(n)` by
/// nonnegative least squares over the orders in `n_list`.
pub fn estimate_h2_constants(
    spec: &CoefficientProcessSpec,
    n_list: &[u32],
    samples: usize,
    grid: &[f64],
) -> Result<HypothesisEstimates> {
    check_estimation_inputs(n_list, samples, grid)?;
    if n_list.len() < 2 {
        return Err(Error::FitDegenerate);
    }
    let k_max = grid.len();
    let per_sample: Vec<Vec<Vec<f64>>> = run_samples(samples, |s| {
        let path = sample_coefficient_path(spec, grid, s.seed, s.index).unwrap();
        let mut rows = vec![vec![0.0; k_max]; n_list.len()];
        for k in 0..k_max {
            let norm = spectral_norm(&path.a_values()[k]);
            for (ni, &n) in n_list.iter().enumerate() {
                rows[ni][k] = norm.powi(n as i32);
            }
        }
        rows
    });
    let mut raw = Vec::with_capacity(n_list.len());
    for (ni, &n) in n_list.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for k in 0..k_max {
            let (mean, _) = mean_var(per_sample.iter().map(|rows| rows[ni][k]));
            best = best.max(mean.max(0.0).powf(1.0 / n as f64));
        }
        raw.push(best);
    }
    let (d1, d2) = fit_nonneg_affine(n_list, &raw, spec.epsilon)?;
    Ok(HypothesisEstimates {
        n_list: n_list.to_vec(),
        d1_hat: d1,
        d2_hat: d2,
        h2_raw: raw,
        eps_n: vec![1.0; n_list.len()],
        sample_count: samples,
        grid_horizon: *grid.last().unwrap(),
        ..Default::default()
    })
}

/// Estimate `rho_n ~ max over grid of E[tr(B_t^e)^n]^{1/n}`.
pub fn estimate_rho_n(
    spec: &CoefficientProcessSpec,
    n_list: &[u32],
    samples: usize,
    grid: &[f64],
) -> Result<HypothesisEstimates> {
    check_estimation_inputs(n_list, samples, grid)?;
    let k_max = grid.len();
    let per_sample: Vec<Vec<Vec<f64>>> = run_samples(samples, |s| {
        let path = sample_coefficient_path(spec, grid, s.seed, s.index).unwrap();
        let mut rows = vec![vec![0.0; k_max]; n_list.len()];
        for k in 0..k_max {
            let tr = path.b_values()[k].trace();
            for (ni, &n) in n_list.iter().enumerate() {
                rows[ni][k] = tr.powi(n as i32);
            }
        }
        rows
    });
    let mut rho = Vec::with_capacity(n_list.len());
    for (ni, &n) in n_list.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for k in 0..k_max {
            let (mean, _) = mean_var(per_sample.iter().map(|rows| rows[ni][k]));
            best = best.max(mean.max(0.0).powf(1.0 / n as f64));
        }
        rho.push(best);
    }
    Ok(HypothesisEstimates {
        n_list: n_list.to_vec(),
        rho_n_hat: rho,
        eps_n: vec![1.0; n_list.len()],
        sample_count: samples,
        grid_horizon: *grid.last().unwrap(),
        ..Default::default()
    })
}

/// Run all three estimators with a shared sampling budget and merge.
pub fn estimate_all(
    spec: &CoefficientProcessSpec,
    n_list: &[u32],
    samples: usize,
    grid: &[f64],
) -> Result<HypothesisEstimates> {
    let h1 = estimate_h1_constants(spec, n_list, samples, grid)?;
    let h2 = estimate_h2_constants(spec, n_list, samples, grid)?;
    let rho = estimate_rho_n(spec, n_list, samples, grid)?;
    Ok(h1.merge(h2).merge(rho))
}

/// Columnar binary layout for persisted paths: header `{r, K}` as u64
/// little-endian, the K+1 grid times, then K+1 row-major A matrices followed
/// by K+1 row-major B matrices, all f64 little-endian. Trajectory dumps
/// append state vectors in the same encoding.
pub fn write_path(path: &PathRealization, out: &mut impl std::io::Write) -> std::io::Result<()> {
    let r = path.dim() as u64;
    let k = (path.grid.len() - 1) as u64;
    out.write_all(&r.to_le_bytes())?;
    out.write_all(&k.to_le_bytes())?;
    for t in &path.grid {
        out.write_all(&t.to_le_bytes())?;
    }
    for m in path.a_values.iter().chain(&path.b_values) {
        for v in m.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_f64(input: &mut impl std::io::Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Read a path previously written by [`write_path`]. The interpolation mode
/// is not part of the on-disk format; the caller supplies it.
pub fn read_path(
    input: &mut impl std::io::Read,
    interpolation: Interpolation,
) -> std::io::Result<PathRealization> {
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u64buf)?;
    let r = u64::from_le_bytes(u64buf) as usize;
    input.read_exact(&mut u64buf)?;
    let k = u64::from_le_bytes(u64buf) as usize;
    if r == 0 || k == 0 || r > 4096 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "bad path header",
        ));
    }
    let mut grid = Vec::with_capacity(k + 1);
    for _ in 0..=k {
        grid.push(read_f64(input)?);
    }
    let mut blocks = [Vec::with_capacity(k + 1), Vec::with_capacity(k + 1)];
    for block in blocks.iter_mut() {
        for _ in 0..=k {
            let mut data = Vec::with_capacity(r * r);
            for _ in 0..r * r {
                data.push(read_f64(input)?);
            }
            let m = SquareMatrix::from_rows(r, data)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
            block.push(m);
        }
    }
    let [a_values, b_values] = blocks;
    Ok(PathRealization {
        grid,
        a_values,
        b_values,
        interpolation,
        seed: 0,
        stream_id: 0,
    })
}

/// Sample context passed to per-sample closures: `index` doubles as the
/// stream id, `seed` is the estimator seed domain.
pub struct SampleCtx {
    pub index: u64,
    pub seed: u64,
}

/// Deterministic fan-out over sample indices: results are collected in index
/// order, so reductions do not depend on the worker count.
fn run_samples<T: Send>(samples: usize, f: impl Fn(SampleCtx) -> T + Sync) -> Vec<T> {
    use rayon::prelude::*;
    (0..samples as u64)
        .into_par_iter()
        .map(|index| {
            f(SampleCtx {
                index,
                seed: ESTIMATOR_SEED,
            })
        })
        .collect()
}

/// Seed domain for hypothesis estimation (kept distinct from simulation
/// seeds so estimates never share randomness with certification runs).
const ESTIMATOR_SEED: u64 = 0x0E57_1147_0000_0001;

fn mean_var(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for v in values {
        n += 1;
        let delta = v - mean;
        mean += delta / n as f64;
        m2 += delta * (v - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    (mean, var)
}

/// Nonnegative least squares for `y_n ~ d1 + (e sqrt(n)) d2`.
fn fit_nonneg_affine(n_list: &[u32], y: &[f64], epsilon: f64) -> Result<(f64, f64)> {
    if n_list.len() < 2 {
        return Err(Error::FitDegenerate);
    }
    let x: Vec<f64> = n_list
        .iter()
        .map(|&n| epsilon * (n as f64).sqrt())
        .collect();
    let m = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = m * sxx - sx * sx;
    let (mut d1, mut d2);
    if det.abs() < 1e-30 {
        // Degenerate regressor (epsilon = 0): slope is unidentifiable => 0.
        d1 = sy / m;
        d2 = 0.0;
    } else {
        d2 = (m * sxy - sx * sy) / det;
        d1 = (sy - d2 * sx) / m;
        if d2 < 0.0 {
            d2 = 0.0;
            d1 = sy / m;
        }
        if d1 < 0.0 {
            d1 = 0.0;
            d2 = (sxy / sxx).max(0.0);
        }
    }
    Ok((d1.max(0.0), d2.max(0.0)))
}
