//! Simulation and desk-scale stability certification for linear stochastic
//! differential equations whose drift/diffusion coefficient matrices are
//! themselves random processes.
//!
//! The library covers:
//!
//! - dense matrix kernels (log norm, spectral norm, PSD roots, matrix
//!   exponential, Lyapunov solves) — [`linalg`];
//! - exponentially converging deterministic drift flows with certified
//!   constants — [`flows`];
//! - generative models for random coefficient processes and empirical
//!   moment-constant estimation — [`coeffs`];
//! - a log-renormalized propagator integrator with a series cross-check —
//!   [`propagator`];
//! - two coupled simulation routes for the resulting linear SDE — [`sde`];
//! - evaluation of the explicit stability constants and Monte Carlo
//!   certification of the contraction / moment / fluctuation bounds —
//!   [`stability`].

pub mod coeffs;
pub mod error;
pub mod flows;
pub mod linalg;
pub mod propagator;
pub mod rng;
pub mod sde;
pub mod stability;

pub use error::{Error, Result};
pub use linalg::{PsdMatrix, SquareMatrix};
