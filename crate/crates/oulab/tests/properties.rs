//! Property tests for the algebraic invariants: norm inequalities, square
//! roots, semigroup laws, quadrature additivity, window monotonicity.

use oulab::coeffs::{
    sample_coefficient_path, uniform_grid, CoefficientProcessSpec, DiffusionModel,
    PerturbationModel,
};
use oulab::flows::{lognorm_integral, H0Flow, MatrixFlow};
use oulab::linalg::{log_norm, matrix_exp, principal_sqrt, spectral_norm, PsdMatrix, SquareMatrix};
use oulab::propagator::{compose, propagate};
use oulab::stability::{compute_tn, compute_tn_eps};
use proptest::prelude::*;

fn matrix_strategy(dim: usize, scale: f64) -> impl Strategy<Value = SquareMatrix> {
    prop::collection::vec(-scale..scale, dim * dim)
        .prop_map(move |data| SquareMatrix::from_rows(dim, data).unwrap())
}

fn stable_flow_strategy(dim: usize) -> impl Strategy<Value = H0Flow> {
    (
        matrix_strategy(dim, 1.5),
        matrix_strategy(dim, 1.0),
        0.0..1.0f64,
        0.3..2.0f64,
        0.1..1.5f64,
    )
        .prop_map(move |(m, dir, a, b, shift)| {
            let a_inf = m.sub(&SquareMatrix::identity(dim).scale(log_norm(&m) + shift));
            let dir = if spectral_norm(&dir) == 0.0 {
                SquareMatrix::identity(dim)
            } else {
                dir
            };
            H0Flow::new(a_inf, dir, a, b).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn log_norm_below_spectral_and_shifts(m in matrix_strategy(4, 3.0), c in -2.0..2.0f64) {
        prop_assert!(log_norm(&m) <= spectral_norm(&m) + 1e-12);
        let shifted = m.add(&SquareMatrix::identity(4).scale(c));
        prop_assert!((log_norm(&shifted) - (log_norm(&m) + c)).abs() < 1e-9);
    }

    #[test]
    fn sqrt_squares_back(m in matrix_strategy(3, 1.5)) {
        let gram = PsdMatrix::new(m.matmul(&m.transpose())).unwrap();
        let root = principal_sqrt(&gram).unwrap();
        let back = root.matrix().matmul(root.matrix());
        let tol = 1e-10 * (1.0 + spectral_norm(gram.matrix()));
        prop_assert!(spectral_norm(&back.sub(gram.matrix())) <= tol);
        prop_assert!(spectral_norm(&root.matrix().sub(&root.matrix().transpose())) <= tol);
    }

    #[test]
    fn matrix_exp_semigroup(m in matrix_strategy(3, 1.8), s in 0.0..2.0f64, t in 0.0..2.0f64) {
        let lhs = matrix_exp(&m, s).matmul(&matrix_exp(&m, t));
        let rhs = matrix_exp(&m, s + t);
        prop_assert!(lhs.sub(&rhs).frobenius_norm() <= 1e-8 * (1.0 + rhs.frobenius_norm()));
    }

    #[test]
    fn lognorm_integral_additivity(flow in stable_flow_strategy(3), s in 0.0..1.0f64, du in 0.1..2.0f64, dt in 0.1..2.0f64) {
        let (u, t) = (s + du, s + du + dt);
        let a = lognorm_integral(&flow, s, u, 512).unwrap().value;
        let b = lognorm_integral(&flow, u, t, 512).unwrap().value;
        let c = lognorm_integral(&flow, s, t, 1024).unwrap().value;
        prop_assert!((a + b - c).abs() < 1e-9);
    }

    #[test]
    fn cocycle_composition(flow in stable_flow_strategy(2), split in 0.1..0.9f64) {
        let t_end = 2.0;
        let tol = 1e-9;
        let u = split * t_end;
        let p1 = propagate(&flow, 0.0, u, tol).unwrap();
        let p2 = propagate(&flow, u, t_end, tol).unwrap();
        let direct = propagate(&flow, 0.0, t_end, tol).unwrap();
        let joined = compose(&p1, &p2).unwrap();
        let err = joined.to_matrix().sub(&direct.to_matrix()).frobenius_norm();
        prop_assert!(err <= 10.0 * tol, "cocycle defect {}", err);
    }

    #[test]
    fn pathwise_log_norm_inequality(flow in stable_flow_strategy(2), t in 0.5..4.0f64) {
        let p = propagate(&flow, 0.0, t, 1e-9).unwrap();
        let bound = lognorm_integral(&flow, 0.0, t, 2048).unwrap();
        prop_assert!(p.log_norm() <= bound.value + 1e-6);
        prop_assert!(bound.value <= bound.upper_bound + 1e-9);
    }

    #[test]
    fn renormalized_factor_stays_in_band(flow in stable_flow_strategy(2), t in 1.0..50.0f64) {
        let p = propagate(&flow, 0.0, t, 1e-6).unwrap();
        let norm = spectral_norm(p.factor());
        prop_assert!((0.5..=2.0).contains(&norm), "factor norm {}", norm);
    }

    #[test]
    fn window_horizon_monotonicity(
        c0 in 0.2..2.0f64,
        c_2n in 0.01..1.0f64,
        d1 in 0.1..2.0f64,
        d2 in 0.05..1.0f64,
        eps_lo in 1e-4..0.4f64,
    ) {
        let eps_hi = (eps_lo * 2.0).min(0.9);
        let (t_lo, _) = compute_tn_eps(2, eps_lo, c0, d1, d2).unwrap();
        let (t_hi, _) = compute_tn_eps(2, eps_hi, c0, d1, d2).unwrap();
        prop_assert!(t_hi < t_lo, "T_n^eps must decrease in eps");
        prop_assert!(compute_tn(2, c0, c_2n) >= 0.0);
        prop_assert!(compute_tn(2, c0, 2.0 * c_2n) >= compute_tn(2, c0, c_2n));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sampled_paths_reproduce(seed in 0u64..1000, stream in 0u64..8) {
        let flow = H0Flow::constant(SquareMatrix::identity(2).scale(-1.0)).unwrap();
        let spec = CoefficientProcessSpec::new(
            flow,
            PerturbationModel::EntrywiseOu { theta: 1.0, sigma: 0.5 },
            DiffusionModel::DriftCoupled { beta: 0.5, gamma: 1.0 },
            0.3,
        )
        .unwrap();
        let grid = uniform_grid(1.0, 16);
        let p1 = sample_coefficient_path(&spec, &grid, seed, stream).unwrap();
        let p2 = sample_coefficient_path(&spec, &grid, seed, stream).unwrap();
        for (a, b) in p1.a_values().iter().zip(p2.a_values()) {
            prop_assert_eq!(a.data(), b.data());
        }
        // Every realized diffusion matrix is PSD, and the path interpolates
        // within its declared end time.
        for b in p1.b_values() {
            prop_assert!(PsdMatrix::new(b.clone()).is_ok());
        }
        prop_assert!(p1.value_at(p1.end_time().unwrap()).is_ok());
    }
}
