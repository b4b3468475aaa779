mod common;

use common::spectral;
use koopres::koopman::{
    eig, predict_modes, predict_onestep, predict_power, project_spectral, spectral_radius,
};
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn residual_small_on_large_random_matrices() {
    for seed in 0..3 {
        let r = spectral::random_residual(seed, 128);
        assert!(r <= 1e-8, "seed {seed}: residual {r:e}");
    }
}

#[test]
fn mode_forecast_matches_matrix_powers() {
    for seed in 0..5 {
        let err = spectral::modes_vs_power(seed, 16, 3, 32);
        assert!(err <= 1e-6, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn conjugate_pairs_and_ordering() {
    let k = ndarray::array![[0.0, -0.5, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.2]];
    let sys = eig(k.view()).unwrap();
    assert!((sys.lambdas[0].im - 0.5).abs() < 1e-14);
    assert!((sys.lambdas[1].im + 0.5).abs() < 1e-14);
    assert!((sys.lambdas[2].re - 0.2).abs() < 1e-14);
}

fn matrix(m: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-2.0..2.0f64, m * m)
        .prop_map(move |v| Array2::from_shape_vec((m, m), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_feasible_and_idempotent(k in matrix(5), target in 0.1..0.99f64) {
        let once = project_spectral(k.view(), target).unwrap();
        prop_assert!(spectral_radius(once.view()).unwrap() <= target + 1e-8);
        let twice = project_spectral(once.view(), target).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn power_forecast_is_bounded(k in matrix(4), v in matrix(4), j in 0usize..12) {
        let k = project_spectral(k.view(), 0.9).unwrap();
        let phi = ndarray::Array1::from_elem(4, 0.5);
        let x = predict_power(k.view(), v.view(), phi.view(), j).unwrap();
        prop_assert!(x.iter().all(|e| e.is_finite()));
        if j == 1 {
            let one = predict_onestep(k.view(), v.view(), phi.view()).unwrap();
            prop_assert_eq!(x, one);
        }
    }

    #[test]
    fn mode_forecasts_are_real_and_finite(k in matrix(4), j in 0usize..40) {
        let k = project_spectral(k.view(), 0.95).unwrap();
        if let Ok(sys) = eig(k.view()) {
            let v = Array2::eye(4);
            let phi = ndarray::Array1::from_elem(4, 1.0);
            let x = predict_modes(&sys.lambdas, v.view(), phi.view(), j).unwrap();
            prop_assert!(x.iter().all(|e| e.is_finite() && e.abs() <= 1.0 + 1e-9));
        }
    }
}
