//! Exponential semigroup (state transition matrix) for time-varying drift
//! flows, kept in log-renormalized form `E = exp(log_scale) * factor` with
//! `||factor||` pinned inside `[1/2, 2]`.
//!
//! The renormalization makes `log ||E_{s,t}||` computable over arbitrarily
//! long horizons where a naive matrix product would leave the floating
//! range. Integration is classical fixed-step RK4; steps never straddle a
//! path grid node, so piecewise-linear coefficient paths are integrated at
//! full order inside every segment.

use crate::error::{Error, Result};
use crate::flows::MatrixFlow;
use crate::linalg::{spectral_norm, SquareMatrix};

/// Renormalized propagator over `[s, t]`: the matrix is
/// `exp(log_scale) * factor` with `||factor||` in `[1/2, 2]`.
#[derive(Debug, Clone)]
pub struct Propagator {
    factor: SquareMatrix,
    log_scale: f64,
    s: f64,
    t: f64,
}

impl Propagator {
    pub fn identity(dim: usize, s: f64) -> Self {
        Self {
            factor: SquareMatrix::identity(dim),
            log_scale: 0.0,
            s,
            t: s,
        }
    }

    pub fn factor(&self) -> &SquareMatrix {
        &self.factor
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.s, self.t)
    }

    /// `log ||E_{s,t}||`, overflow-free.
    pub fn log_norm(&self) -> f64 {
        self.log_scale + spectral_norm(&self.factor).ln()
    }

    /// Materialize the full matrix. Over long stable horizons this may
    /// underflow to zero; prefer `log_norm` / `apply_log` for analysis.
    pub fn to_matrix(&self) -> SquareMatrix {
        self.factor.scale(self.log_scale.exp())
    }

    /// Apply to a vector, returning `(unit-ish vector, log scale)` so long
    /// horizons stay representable.
    pub fn apply_log(&self, v: &[f64]) -> (Vec<f64>, f64) {
        let w = self.factor.mul_vec(v);
        (w, self.log_scale)
    }

    fn renormalize(&mut self) {
        let norm = spectral_norm(&self.factor);
        if norm > 0.0 && (!(0.75..=1.5).contains(&norm) || !norm.is_finite()) {
            self.factor = self.factor.scale(1.0 / norm);
            self.log_scale += norm.ln();
        }
    }
}

/// `log ||E||` of a propagator (free-function form).
pub fn log_norm_of(p: &Propagator) -> f64 {
    p.log_norm()
}

/// Integrate `dE/du = A_u E` from `s` to `t` with fixed-step RK4.
///
/// The step obeys `h <= min(tol^{1/4}, 0.5 / sup||A||)` and additionally the
/// truncation-error budget `(t-s) M^5 h^4 / 120 <= tol`, so the constant-flow
/// error actually lands near `tol`. The factor is renormalized against the
/// spectral norm after every step.
pub fn propagate<F: MatrixFlow + ?Sized>(flow: &F, s: f64, t: f64, tol: f64) -> Result<Propagator> {
    if !(0.0 <= s && s <= t) {
        return Err(Error::InvalidInput("need 0 <= s <= t".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    if let Some(end) = flow.end_time() {
        if t > end * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::GridExceeded { t, start: 0.0, end });
        }
    }
    let dim = flow.dim();
    let mut prop = Propagator::identity(dim, s);
    prop.t = t;
    if t == s {
        return Ok(prop);
    }
    let norm_bound = flow.norm_bound(s, t).max(1e-12);
    let span = t - s;
    let h_tol = tol.powf(0.25);
    let h_stab = 0.5 / norm_bound;
    let h_trunc = (120.0 * tol / (span * norm_bound.powi(5))).powf(0.25);
    let h_max = h_tol.min(h_stab).min(h_trunc).min(span);

    // Split at path grid nodes so RK4 never integrates across a kink.
    let mut cuts = vec![s];
    cuts.extend(flow.breakpoints(s, t));
    cuts.push(t);
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let steps = ((hi - lo) / h_max).ceil().max(1.0) as usize;
        let h = (hi - lo) / steps as f64;
        let seg_mid = 0.5 * (lo + hi);
        for k in 0..steps {
            let u0 = lo + h * k as f64;
            let a1 = flow.value_in_segment(u0, seg_mid)?;
            let a2 = flow.value_in_segment(u0 + 0.5 * h, seg_mid)?;
            let a4 = flow.value_in_segment(u0 + h, seg_mid)?;
            rk4_step(&mut prop.factor, &a1, &a2, &a4, h);
            prop.renormalize();
        }
    }
    if !prop.factor.is_finite() {
        return Err(Error::InvalidInput(
            "propagator integration produced non-finite values".into(),
        ));
    }
    Ok(prop)
}

/// One RK4 step of `Y' = A(u) Y` given A at the step endpoints and midpoint.
fn rk4_step(
    y: &mut SquareMatrix,
    a_lo: &SquareMatrix,
    a_mid: &SquareMatrix,
    a_hi: &SquareMatrix,
    h: f64,
) {
    let k1 = a_lo.matmul(y);
    let k2 = a_mid.matmul(&y.add(&k1.scale(0.5 * h)));
    let k3 = a_mid.matmul(&y.add(&k2.scale(0.5 * h)));
    let k4 = a_hi.matmul(&y.add(&k3.scale(h)));
    *y = y.add(
        &k1.add(&k2.scale(2.0))
            .add(&k3.scale(2.0))
            .add(&k4)
            .scale(h / 6.0),
    );
}

/// Compose propagators over chained intervals: `[s,u]` then `[u,t]`.
pub fn compose(p1: &Propagator, p2: &Propagator) -> Result<Propagator> {
    let (s1, t1) = p1.interval();
    let (s2, t2) = p2.interval();
    if (t1 - s2).abs() > 1e-9 * (1.0 + t1.abs()) {
        return Err(Error::IntervalMismatch { s1, t1, s2, t2 });
    }
    let mut out = Propagator {
        factor: p2.factor.matmul(&p1.factor),
        log_scale: p1.log_scale + p2.log_scale,
        s: s1,
        t: t2,
    };
    out.renormalize();
    Ok(out)
}

/// Truncated iterated-integral (Peano-Baker) series
/// `I + int A + int int A A + ...` to `order`, evaluated with cumulative
/// Simpson quadrature on a uniform grid of `2 * panels` nodes.
///
/// Only valid in the convergence-friendly regime `(t - s) sup||A|| <= 1`;
/// serves as an integrator-independent cross-check.
pub fn peano_baker<F: MatrixFlow + ?Sized>(
    flow: &F,
    s: f64,
    t: f64,
    order: usize,
    panels: usize,
) -> Result<SquareMatrix> {
    if order < 1 {
        return Err(Error::InvalidInput("series order must be >= 1".into()));
    }
    if !(0.0 <= s && s <= t) {
        return Err(Error::InvalidInput("need 0 <= s <= t".into()));
    }
    let sup = flow.norm_bound(s, t);
    let product = (t - s) * sup;
    if product > 1.0 {
        return Err(Error::RegimeTooWide { product });
    }
    let dim = flow.dim();
    let n_nodes = 2 * panels.max(4) + 1;
    let h = (t - s) / (n_nodes - 1) as f64;
    let a_vals: Vec<SquareMatrix> = (0..n_nodes)
        .map(|j| flow.value_at(s + h * j as f64))
        .collect::<Result<_>>()?;
    // term_k at every node; running sum accumulates the series at t.
    let mut term: Vec<SquareMatrix> = vec![SquareMatrix::identity(dim); n_nodes];
    let mut series = SquareMatrix::identity(dim);
    for _k in 1..=order {
        let integrand: Vec<SquareMatrix> =
            (0..n_nodes).map(|j| a_vals[j].matmul(&term[j])).collect();
        term = cumulative_simpson(&integrand, h);
        series = series.add(&term[n_nodes - 1]);
    }
    Ok(series)
}

/// Cumulative integral of matrix samples on a uniform grid with an odd node
/// count: Simpson pairs to even nodes, quadratic half-panel rule to odd ones.
fn cumulative_simpson(f: &[SquareMatrix], h: f64) -> Vec<SquareMatrix> {
    let n = f.len();
    let dim = f[0].dim();
    let mut out = vec![SquareMatrix::zeros(dim); n];
    for j in (2..n).step_by(2) {
        let inc = f[j - 2].add(&f[j - 1].scale(4.0)).add(&f[j]).scale(h / 3.0);
        out[j] = out[j - 2].add(&inc);
    }
    for j in (1..n).step_by(2) {
        // int_{x0}^{x0+h} over the quadratic through (f_{j-1}, f_j, f_{j+1});
        // the final node (if odd) reuses the trailing quadratic.
        let inc = if j + 1 < n {
            f[j - 1]
                .scale(5.0)
                .add(&f[j].scale(8.0))
                .add(&f[j + 1].scale(-1.0))
                .scale(h / 12.0)
        } else {
            f[j - 2]
                .scale(-1.0)
                .add(&f[j - 1].scale(8.0))
                .add(&f[j].scale(5.0))
                .scale(h / 12.0)
        };
        out[j] = out[j - 1].add(&inc);
    }
    out
}
