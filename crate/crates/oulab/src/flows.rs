//! Deterministic time-varying drift flows `t -> A_t` that converge
//! exponentially to a stable limit, with certified constants.
//!
//! The canonical parametric family is
//!
//! ```text
//! A_t = A_inf + a * exp(-b t) * M,     ||M|| = 1,  mu(A_inf) < 0
//! ```
//!
//! so that `||A_t - A_inf|| = a e^{-bt}` exactly. Tabulated flows (time grid
//! plus matrices) are accepted too, with the decay bound checked on the grid.

use crate::error::{Error, Result};
use crate::linalg::{log_norm, spectral_norm, SquareMatrix};

/// A matrix-valued function of time, the common interface consumed by the
/// propagator integrator.
pub trait MatrixFlow {
    fn dim(&self) -> usize;

    /// Value at time `t >= 0`.
    fn value_at(&self, t: f64) -> Result<SquareMatrix>;

    /// Latest time the flow is defined for (`None` = unbounded).
    fn end_time(&self) -> Option<f64>;

    /// Upper bound for `sup ||A_u||` over `[s, t]`, used for step control.
    fn norm_bound(&self, s: f64, t: f64) -> f64;

    /// Interior times where the flow is not smooth (path grid nodes).
    /// Integration steps never straddle these.
    fn breakpoints(&self, _s: f64, _t: f64) -> Vec<f64> {
        Vec::new()
    }

    /// Value at `t` for an integrator stage known to lie inside the smooth
    /// segment containing `seg_mid`. Jump paths resolve exact node hits to
    /// the segment's own value (the left limit at a segment's right end);
    /// smooth flows just evaluate.
    fn value_in_segment(&self, t: f64, seg_mid: f64) -> Result<SquareMatrix> {
        let _ = seg_mid;
        self.value_at(t)
    }
}

/// Exponentially converging drift flow `A_t = A_inf + a e^{-bt} M`.
#[derive(Debug, Clone)]
pub struct H0Flow {
    a_inf: SquareMatrix,
    direction: SquareMatrix,
    amplitude: f64,
    rate: f64,
}

impl H0Flow {
    /// Construct a flow. Requires `mu(A_inf) < 0`, `a >= 0`, `b > 0`.
    /// The transient direction is normalized to unit spectral norm.
    pub fn new(
        a_inf: SquareMatrix,
        direction: SquareMatrix,
        amplitude: f64,
        rate: f64,
    ) -> Result<Self> {
        if direction.dim() != a_inf.dim() {
            return Err(Error::InvalidInput(
                "A_inf and M must share a dimension".into(),
            ));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidInput(
                "transient amplitude a must be finite and >= 0".into(),
            ));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidInput(
                "decay rate b must be finite and > 0".into(),
            ));
        }
        let mu = log_norm(&a_inf);
        if mu >= 0.0 {
            return Err(Error::NotStable { mu });
        }
        let m_norm = spectral_norm(&direction);
        let direction = if amplitude == 0.0 {
            SquareMatrix::zeros(a_inf.dim())
        } else {
            if m_norm == 0.0 {
                return Err(Error::InvalidInput(
                    "transient direction M must be nonzero when a > 0".into(),
                ));
            }
            direction.scale(1.0 / m_norm)
        };
        Ok(Self {
            a_inf,
            direction,
            amplitude,
            rate,
        })
    }

    /// Constant flow `A_t = A_inf`.
    pub fn constant(a_inf: SquareMatrix) -> Result<Self> {
        let dim = a_inf.dim();
        Self::new(a_inf, SquareMatrix::zeros(dim), 0.0, 1.0)
    }

    pub fn a_inf(&self) -> &SquareMatrix {
        &self.a_inf
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// `A_t = A_inf + a e^{-bt} M`.
    pub fn eval(&self, t: f64) -> SquareMatrix {
        if self.amplitude == 0.0 {
            return self.a_inf.clone();
        }
        let w = self.amplitude * (-self.rate * t).exp();
        self.a_inf.add(&self.direction.scale(w))
    }
}

impl MatrixFlow for H0Flow {
    fn dim(&self) -> usize {
        self.a_inf.dim()
    }

    fn value_at(&self, t: f64) -> Result<SquareMatrix> {
        if t < 0.0 {
            return Err(Error::GridExceeded {
                t,
                start: 0.0,
                end: f64::INFINITY,
            });
        }
        Ok(self.eval(t))
    }

    fn end_time(&self) -> Option<f64> {
        None
    }

    fn norm_bound(&self, s: f64, _t: f64) -> f64 {
        spectral_norm(&self.a_inf) + self.amplitude * (-self.rate * s.max(0.0)).exp()
    }
}

/// Flow given on an explicit time grid, linearly interpolated. The declared
/// `(a_inf, a, b)` envelope is validated by `certify_h0`.
#[derive(Debug, Clone)]
pub struct TabulatedFlow {
    pub grid: Vec<f64>,
    pub values: Vec<SquareMatrix>,
    pub a_inf: SquareMatrix,
    pub amplitude: f64,
    pub rate: f64,
}

impl TabulatedFlow {
    pub fn new(
        grid: Vec<f64>,
        values: Vec<SquareMatrix>,
        a_inf: SquareMatrix,
        amplitude: f64,
        rate: f64,
    ) -> Result<Self> {
        if grid.len() != values.len() || grid.len() < 2 {
            return Err(Error::InvalidInput(
                "tabulated flow needs >= 2 aligned grid nodes".into(),
            ));
        }
        if grid[0] != 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "grid must start at 0 and strictly increase".into(),
            ));
        }
        if values.iter().any(|m| m.dim() != a_inf.dim()) {
            return Err(Error::InvalidInput(
                "tabulated values must match A_inf dimension".into(),
            ));
        }
        Ok(Self {
            grid,
            values,
            a_inf,
            amplitude,
            rate,
        })
    }
}

impl MatrixFlow for TabulatedFlow {
    fn dim(&self) -> usize {
        self.a_inf.dim()
    }

    fn value_at(&self, t: f64) -> Result<SquareMatrix> {
        let end = *self.grid.last().unwrap();
        if t < 0.0 || t > end * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::GridExceeded { t, start: 0.0, end });
        }
        let t = t.min(end);
        let k = match self.grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            Ok(k) => return Ok(self.values[k].clone()),
            Err(k) => k - 1,
        };
        let (t0, t1) = (self.grid[k], self.grid[k + 1]);
        let w = (t - t0) / (t1 - t0);
        Ok(self.values[k]
            .scale(1.0 - w)
            .add(&self.values[k + 1].scale(w)))
    }

    fn end_time(&self) -> Option<f64> {
        self.grid.last().copied()
    }

    fn norm_bound(&self, s: f64, t: f64) -> f64 {
        // Linear interpolation keeps segment norms below the node maxima.
        self.grid
            .iter()
            .zip(&self.values)
            .filter(|(g, _)| **g >= s - 1e-12 && **g <= t + 1e-12)
            .map(|(_, v)| spectral_norm(v))
            .fold(spectral_norm(&self.values[0]), f64::max)
    }

    fn breakpoints(&self, s: f64, t: f64) -> Vec<f64> {
        self.grid
            .iter()
            .copied()
            .filter(|&g| g > s && g < t)
            .collect()
    }
}

/// Certified constants of an exponentially converging flow.
#[derive(Debug, Clone)]
pub struct H0Certificate {
    pub a: f64,
    pub b: f64,
    /// `c0 = |mu(A_inf)|`.
    pub c0: f64,
    pub checked_horizon: f64,
    pub grid_points: usize,
}

/// Certify the decay envelope and stability of the limit.
///
/// Fails with `NotStable` when `mu(A_inf) >= 0`. For the parametric family
/// the grid check cannot fail; it exists for tabulated flows, where a grid
/// node violating `||A_t - A_inf|| <= a e^{-bt} (1 + 1e-9)` yields
/// `DecayViolated`.
pub fn certify_h0<F>(flow: &F, horizon: f64, grid: usize) -> Result<H0Certificate>
where
    F: H0Envelope,
{
    if !(horizon > 0.0) || grid < 2 {
        return Err(Error::InvalidInput(
            "certification needs horizon > 0 and grid >= 2".into(),
        ));
    }
    let mu = log_norm(flow.limit());
    if mu >= 0.0 {
        return Err(Error::NotStable { mu });
    }
    let (a, b) = flow.envelope();
    // Absolute slack: computing A_t - A_inf in f64 cancels down to the unit
    // roundoff of the A_inf entries, so a purely relative check would fail
    // spuriously once the decay drops below ~1e-8 ||A_inf||.
    let abs_slack = 1e-13 * (1.0 + spectral_norm(flow.limit()));
    for k in 0..grid {
        let t = horizon * k as f64 / (grid - 1) as f64;
        let value = flow.envelope_value_at(t)?;
        let deviation = spectral_norm(&value.sub(flow.limit()));
        let allowed = a * (-b * t).exp() * (1.0 + 1e-9) + abs_slack;
        if deviation > allowed {
            return Err(Error::DecayViolated {
                t,
                deviation,
                allowed,
            });
        }
    }
    Ok(H0Certificate {
        a,
        b,
        c0: -mu,
        checked_horizon: horizon,
        grid_points: grid,
    })
}

/// Flows that declare an exponential-decay envelope towards a limit matrix.
pub trait H0Envelope {
    fn limit(&self) -> &SquareMatrix;
    fn envelope(&self) -> (f64, f64);
    fn envelope_value_at(&self, t: f64) -> Result<SquareMatrix>;
}

impl H0Envelope for H0Flow {
    fn limit(&self) -> &SquareMatrix {
        &self.a_inf
    }
    fn envelope(&self) -> (f64, f64) {
        (self.amplitude, self.rate)
    }
    fn envelope_value_at(&self, t: f64) -> Result<SquareMatrix> {
        self.value_at(t)
    }
}

impl H0Envelope for TabulatedFlow {
    fn limit(&self) -> &SquareMatrix {
        &self.a_inf
    }
    fn envelope(&self) -> (f64, f64) {
        (self.amplitude, self.rate)
    }
    fn envelope_value_at(&self, t: f64) -> Result<SquareMatrix> {
        let end = *self.grid.last().unwrap();
        self.value_at(t.min(end))
    }
}

/// Result of integrating the log norm along a flow.
#[derive(Debug, Clone, Copy)]
pub struct LogNormIntegral {
    /// Composite-Simpson value of `int_s^t mu(A_u) du`.
    pub value: f64,
    /// Closed-form majorant `mu(A_inf) (t - s) + (a/b) e^{-bs}`.
    pub upper_bound: f64,
}

/// Composite-Simpson approximation of `int_s^t mu(A_u) du` for an H0 flow,
/// along with the closed-form upper bound.
pub fn lognorm_integral(flow: &H0Flow, s: f64, t: f64, grid: usize) -> Result<LogNormIntegral> {
    if !(0.0 <= s && s <= t) {
        return Err(Error::InvalidInput("need 0 <= s <= t".into()));
    }
    let mu_inf = log_norm(flow.a_inf());
    let upper_bound = mu_inf * (t - s) + flow.amplitude() / flow.rate() * (-flow.rate() * s).exp();
    if t == s {
        return Ok(LogNormIntegral {
            value: 0.0,
            upper_bound,
        });
    }
    if flow.amplitude() == 0.0 {
        return Ok(LogNormIntegral {
            value: mu_inf * (t - s),
            upper_bound,
        });
    }
    let value = simpson(|u| log_norm(&flow.eval(u)), s, t, grid.max(2));
    Ok(LogNormIntegral { value, upper_bound })
}

/// `int_s^t mu(A_u) du` along a sampled coefficient path, respecting the
/// path's interpolation (per-segment Simpson for linear segments, exact sums
/// for piecewise-constant segments).
pub fn lognorm_integral_path(
    path: &crate::coeffs::PathRealization,
    s: f64,
    t: f64,
    panels_per_segment: usize,
) -> Result<f64> {
    use crate::coeffs::Interpolation;
    if !(0.0 <= s && s <= t) {
        return Err(Error::InvalidInput("need 0 <= s <= t".into()));
    }
    let end = path.grid().last().copied().unwrap_or(0.0);
    if t > end * (1.0 + 1e-12) + 1e-300 {
        return Err(Error::GridExceeded { t, start: 0.0, end });
    }
    if t == s {
        return Ok(0.0);
    }
    let mut cuts: Vec<f64> = vec![s];
    cuts.extend(path.grid().iter().copied().filter(|&g| g > s && g < t));
    cuts.push(t);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        match path.interpolation() {
            Interpolation::LeftConstant => {
                let mid = path.value_at(0.5 * (lo + hi))?;
                total += log_norm(&mid) * (hi - lo);
            }
            Interpolation::Linear => {
                total += simpson(
                    |u| log_norm(&path.value_at(u).unwrap()),
                    lo,
                    hi,
                    panels_per_segment.max(2),
                );
            }
        }
    }
    Ok(total)
}

/// Composite Simpson with `panels` panels (rounded up to even subdivisions).
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels.max(2);
    let h = (b - a) / n as f64;
    let mut acc = 0.0;
    for k in 0..n {
        let lo = a + h * k as f64;
        let hi = lo + h;
        let mid = 0.5 * (lo + hi);
        acc += (hi - lo) / 6.0 * (f(lo) + 4.0 * f(mid) + f(hi));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::log_norm;
    use rand::{Rng, SeedableRng};

    fn flow_2x2(a: f64, b: f64) -> H0Flow {
        let a_inf = SquareMatrix::identity(2).scale(-1.0);
        let m = SquareMatrix::from_nested(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        H0Flow::new(a_inf, m, a, b).unwrap()
    }

    #[test]
    fn eval_flow_limits_and_substitution() {
        let flow = flow_2x2(1.0, 1.0);
        let far = flow.eval(700.0);
        assert!(far.sub(flow.a_inf()).frobenius_norm() < 1e-300);

        let frozen = flow_2x2(0.0, 1.0);
        assert_eq!(frozen.eval(3.7), *frozen.a_inf());

        let at0 = flow.eval(0.0);
        let expected = flow
            .a_inf()
            .add(&SquareMatrix::from_nested(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap());
        assert!(at0.sub(&expected).frobenius_norm() < 1e-14);
    }

    #[test]
    fn direction_normalized_at_construction() {
        let a_inf = SquareMatrix::identity(2).scale(-1.0);
        let m = SquareMatrix::from_nested(&[&[0.0, 4.0], &[4.0, 0.0]]).unwrap();
        let flow = H0Flow::new(a_inf.clone(), m, 0.5, 1.0).unwrap();
        // ||A_0 - A_inf|| must equal a exactly for the parametric family.
        let dev = spectral_norm(&flow.eval(0.0).sub(&a_inf));
        assert!((dev - 0.5).abs() < 1e-12);
    }

    #[test]
    fn certify_h0_basic() {
        let flow = flow_2x2(0.5, 2.0);
        let cert = certify_h0(&flow, 20.0, 64).unwrap();
        assert!((cert.c0 - 1.0).abs() < 1e-12);
        assert_eq!(cert.a, 0.5);
        assert_eq!(cert.b, 2.0);
    }

    #[test]
    fn certify_h0_rejects_skew_limit() {
        let skew = SquareMatrix::from_nested(&[&[0.0, 1.0], &[-1.0, 0.0]]).unwrap();
        let err = H0Flow::constant(skew).unwrap_err();
        assert!(matches!(err, Error::NotStable { .. }));
    }

    #[test]
    fn negative_spectrum_does_not_imply_stability() {
        // Eigenvalues of A are {-1, -1} but sym part has eigenvalues {0, -2}.
        let a = SquareMatrix::from_nested(&[&[-1.0, 2.0], &[0.0, -1.0]]).unwrap();
        assert!((log_norm(&a) - 0.0).abs() < 1e-12);
        let err = H0Flow::constant(a).unwrap_err();
        assert!(matches!(err, Error::NotStable { mu } if mu.abs() < 1e-12));
    }

    #[test]
    fn certify_h0_iff_stable_limit() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..40 {
            let data: Vec<f64> = (0..9).map(|_| (rng.random::<f64>() - 0.5) * 3.0).collect();
            let m = SquareMatrix::from_rows(3, data).unwrap();
            let stable = log_norm(&m) < 0.0;
            let built = H0Flow::constant(m);
            assert_eq!(built.is_ok(), stable);
            if let Ok(flow) = built {
                assert!(certify_h0(&flow, 5.0, 16).is_ok());
            }
        }
    }

    #[test]
    fn tabulated_decay_violation_is_reachable() {
        let a_inf = SquareMatrix::identity(2).scale(-1.0);
        let bump = SquareMatrix::identity(2).scale(-0.2);
        let values = vec![a_inf.add(&bump), a_inf.add(&bump), a_inf.clone()];
        let flow = TabulatedFlow::new(vec![0.0, 5.0, 10.0], values, a_inf, 0.2, 1.0).unwrap();
        // At t = 5 the envelope allows 0.2 e^{-5} but the value still deviates by 0.2.
        let err = certify_h0(&flow, 10.0, 3).unwrap_err();
        assert!(matches!(err, Error::DecayViolated { .. }));
    }

    #[test]
    fn lognorm_integral_constant_and_degenerate() {
        let frozen = flow_2x2(0.0, 1.0);
        let out = lognorm_integral(&frozen, 1.0, 4.0, 64).unwrap();
        assert!((out.value - (-3.0)).abs() < 1e-12);
        let point = lognorm_integral(&frozen, 2.0, 2.0, 8).unwrap();
        assert_eq!(point.value, 0.0);
    }

    #[test]
    fn lognorm_integral_scalar_reduction() {
        // r=1, A_inf = -1, M = 1: mu(A_u) = -1 + e^{-u}.
        let flow = H0Flow::new(
            SquareMatrix::diag(&[-1.0]),
            SquareMatrix::diag(&[1.0]),
            1.0,
            1.0,
        )
        .unwrap();
        let out = lognorm_integral(&flow, 0.0, 1.0, 256).unwrap();
        let exact = -1.0 + (1.0 - (-1.0f64).exp());
        assert!((out.value - exact).abs() < 1e-10);
        assert!(out.value <= out.upper_bound + 1e-12);
    }

    #[test]
    fn lognorm_integral_additive() {
        let flow = flow_2x2(0.7, 1.3);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = rng.random::<f64>() * 2.0;
            let u = s + rng.random::<f64>() * 2.0;
            let t = u + rng.random::<f64>() * 2.0;
            let a = lognorm_integral(&flow, s, u, 512).unwrap().value;
            let b = lognorm_integral(&flow, u, t, 512).unwrap().value;
            let c = lognorm_integral(&flow, s, t, 1024).unwrap().value;
            assert!((a + b - c).abs() < 1e-9);
        }
    }

    #[test]
    fn lognorm_integral_respects_closed_form() {
        let flow = flow_2x2(0.9, 0.8);
        for &(s, t) in &[(0.0, 1.0), (0.5, 3.0), (2.0, 10.0)] {
            let out = lognorm_integral(&flow, s, t, 2048).unwrap();
            assert!(out.value <= out.upper_bound + 1e-9);
        }
    }
}
