use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("limit matrix is not stable: log norm = {mu:.6e} >= 0")]
    NotStable { mu: f64 },

    #[error("decay bound violated at t = {t}: ||A_t - A_inf|| = {deviation:.6e} > {allowed:.6e}")]
    DecayViolated {
        t: f64,
        deviation: f64,
        allowed: f64,
    },

    #[error("matrix is not positive semi-definite: min eigenvalue = {min_eig:.6e}")]
    NotPsd { min_eig: f64 },

    #[error("drift matrix is not Hurwitz; Lyapunov equation has no stabilizing solution")]
    NotHurwitz,

    #[error("propagator intervals do not chain: [{s1}, {t1}] then [{s2}, {t2}]")]
    IntervalMismatch { s1: f64, t1: f64, s2: f64, t2: f64 },

    #[error("series regime too wide: (t - s) * sup||A|| = {product:.4} > 1")]
    RegimeTooWide { product: f64 },

    #[error("time {t} outside path grid [{start}, {end}]")]
    GridExceeded { t: f64, start: f64, end: f64 },

    #[error("step dt = {dt} too large for drift norm {norm:.4}: require dt <= {max_dt:.4e}")]
    StepTooLarge { dt: f64, norm: f64, max_dt: f64 },

    #[error("theorem window empty: T_n = {t_n:.6} >= T_n^eps = {t_n_eps:.6}")]
    EmptyWindow { t_n: f64, t_n_eps: f64 },

    #[error("theorem gate unsatisfied: {reason}")]
    GateUnsatisfied { reason: String },

    #[error("epsilon = 1 makes the log(1/eps^2) horizon vanish")]
    EpsilonOne,

    #[error("moment-order fit needs at least 2 orders")]
    FitDegenerate,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
