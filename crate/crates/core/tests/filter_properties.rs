use gil_core::filter::{self, CovFactor, Innovation, StateSpaceModel, TrackState};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn spd(entries: &[f64], n: usize, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_column_slice(n, n, &entries[..n * n]);
    &a * a.transpose() + DMatrix::identity(n, n) * ridge
}

fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax() / a.amax().max(1.0)
}

proptest! {
    #[test]
    fn whitened_norm_equals_nis(
        n in 1usize..=5,
        entries in prop::collection::vec(-2.0f64..2.0, 25),
        nu in prop::collection::vec(-5.0f64..5.0, 5),
    ) {
        let s = spd(&entries, n, 0.1);
        let inn = Innovation::new(DVector::from_column_slice(&nu[..n]), s).unwrap();
        let z = filter::nis(&inn).unwrap();
        let u = filter::whiten(&inn).unwrap();
        prop_assert!((u.norm_squared() - z).abs() <= 1e-10 * z.max(1.0));
    }

    #[test]
    fn recursion_keeps_covariance_symmetric(
        entries in prop::collection::vec(-1.0f64..1.0, 16),
        z in prop::collection::vec(-3.0f64..3.0, 2),
        steps in 1usize..40,
    ) {
        let model = StateSpaceModel::constant_velocity_2d(0.5, 0.2, 0.7).unwrap();
        let mut state = TrackState::new(DVector::zeros(4), spd(&entries, 4, 0.05)).unwrap();
        for _ in 0..steps {
            let pred = filter::predict(&state, &model).unwrap();
            prop_assert!(max_asymmetry(&pred.cov) <= 1e-12);
            let inn = filter::innovation(&DVector::from_column_slice(&z), &pred, &model).unwrap();
            state = filter::update(&pred, &inn, &model).unwrap();
            prop_assert!(max_asymmetry(&state.cov) <= 1e-12);
            prop_assert!(state.cov.clone().cholesky().is_some());
        }
    }

    #[test]
    fn scaling_s_scales_nis_inversely(
        entries in prop::collection::vec(-2.0f64..2.0, 9),
        nu in prop::collection::vec(-5.0f64..5.0, 3),
        c in 0.01f64..100.0,
    ) {
        let s = spd(&entries, 3, 0.2);
        let v = DVector::from_column_slice(&nu);
        let base = CovFactor::new(&s).unwrap().nis(&v).unwrap();
        let scaled = CovFactor::new(&(&s * c)).unwrap().nis(&v).unwrap();
        prop_assert!((scaled * c - base).abs() <= 1e-9 * base.max(1.0));
    }
}
