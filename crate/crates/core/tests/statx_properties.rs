use gil_core::statx::{
    chi2_cdf, chi2_quantile, gamma_factor, gamma_factor_2d, gate_threshold_2d, min_nis_mean_2d,
};
use gil_core::Dof;
use proptest::prelude::*;

fn dof(m: u32) -> Dof {
    Dof::new(m).unwrap()
}

#[test]
fn contraction_strictly_increasing_in_tau() {
    for m in 1..=10 {
        let mut prev = 0.0;
        for i in 0..100 {
            let tau = 0.1 + 0.4 * i as f64;
            let g = gamma_factor(tau, dof(m)).unwrap().gamma;
            assert!(g > prev, "m={m} tau={tau}: {g} <= {prev}");
            prev = g;
        }
    }
}

#[test]
fn quantile_cdf_round_trip_grid() {
    for m in 1..=10 {
        for k in 1..=99 {
            let p = k as f64 / 100.0;
            let z = chi2_quantile(p, dof(m)).unwrap();
            assert!(
                (chi2_cdf(z, dof(m)).unwrap() - p).abs() < 1e-9,
                "m={m} p={p}"
            );
        }
    }
}

#[test]
fn closed_form_contraction_matches_general() {
    for k in 1..200 {
        let p = k as f64 / 200.0;
        let closed = gamma_factor_2d(p).unwrap().gamma;
        let general = gamma_factor(gate_threshold_2d(p).unwrap(), dof(2))
            .unwrap()
            .gamma;
        assert!((closed - general).abs() < 1e-9, "p={p}");
    }
}

#[test]
fn contraction_limits() {
    for m in 1..=10 {
        assert!(gamma_factor(1e3, dof(m)).unwrap().gamma > 0.9999);
        assert!(gamma_factor(1e-6, dof(m)).unwrap().gamma < 1e-4);
    }
}

proptest! {
    #[test]
    fn contraction_bounded(tau in 1e-8f64..500.0, m in 1u32..=10) {
        let g = gamma_factor(tau, dof(m)).unwrap().gamma;
        prop_assert!(g > 0.0);
        // below 1 wherever the truncation is numerically visible
        if chi2_cdf(tau, dof(m)).unwrap() < 1.0 - 1e-12 {
            prop_assert!(g < 1.0);
        } else {
            prop_assert!(g <= 1.0);
        }
    }

    #[test]
    fn quantile_round_trip(p in 0.001f64..0.999, m in 1u32..=30) {
        let z = chi2_quantile(p, dof(m)).unwrap();
        prop_assert!((chi2_cdf(z, dof(m)).unwrap() - p).abs() < 1e-10);
    }

    #[test]
    fn truncated_mean_below_tau_and_m(tau in 1e-3f64..80.0, m in 1u32..=20) {
        let mean = gamma_factor(tau, dof(m)).unwrap().mean_nis();
        prop_assert!(mean > 0.0);
        prop_assert!(mean < tau);
        prop_assert!(mean <= m as f64);
    }

    #[test]
    fn nn_ordering_and_gate_bound(p in 0.05f64..0.999, big_m in 1u32..12) {
        let here = min_nis_mean_2d(p, big_m).unwrap();
        let next = min_nis_mean_2d(p, big_m + 1).unwrap();
        prop_assert!(next < here);
        if big_m >= 2 {
            prop_assert!(here < 2.0 * gamma_factor_2d(p).unwrap().gamma);
        }
    }
}
