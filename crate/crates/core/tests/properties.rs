use isocov::evaluation::{metric_report, study_sites};
use isocov::gp_core::{build_cov_matrix, simulate_gp, ProfileLikelihood, SpatialDataset};
use isocov::sieve_mle::{fit_from, fit_given_m, FitConfig, SieveState};
use isocov::basis::lift_weights;
use isocov::empirical::empirical_summary;
use isocov::{IsotropicCovariance, ParametricCovariance, SieveCovariance};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, len).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn sites(max: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (2..=max).prop_flat_map(|n| prop::collection::vec(0.0f64..10.0, 2 * n)).prop_map(|v| DMatrix::from_row_slice(v.len() / 2, 2, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sieve_covariances_factorize_without_jitter(
        w in (1usize..25).prop_flat_map(simplex),
        rho in 0.2f64..3.0,
        coords in sites(30),
    ) {
        let model = SieveCovariance::new(w, rho, 1.0, 0.0).unwrap();
        let handle = build_cov_matrix(&model, &coords).unwrap();
        prop_assert_eq!(handle.jitter, 0.0);
    }

    #[test]
    fn profile_is_scale_equivariant(
        w1 in simplex(4),
        w2 in simplex(4),
        rho in 0.5f64..3.0,
        c in 0.1f64..10.0,
        seed in any::<u64>(),
    ) {
        let truth = ParametricCovariance::cauchy(1.0, 1.5).unwrap();
        let data = simulate_gp(&truth, &study_sites(12, 8.0, seed), 3, seed).unwrap();
        let scaled = SpatialDataset::new(data.coords.clone(), &data.obs * c, None).unwrap();
        let (p, q) = (ProfileLikelihood::new(&data), ProfileLikelihood::new(&scaled));
        let (a1, a2) = (p.evaluate(&w1, rho, 0.0).unwrap(), p.evaluate(&w2, rho * 1.3, 0.0).unwrap());
        let (b1, b2) = (q.evaluate(&w1, rho, 0.0).unwrap(), q.evaluate(&w2, rho * 1.3, 0.0).unwrap());
        prop_assert!((b1.sigma2 / a1.sigma2 - c * c).abs() <= 1e-9 * c * c);
        // a constant shift of the profile leaves every comparison, hence the argmax, unchanged
        let shift = (b1.loglik - a1.loglik) - (b2.loglik - a2.loglik);
        prop_assert!(shift.abs() <= 1e-8 * a1.loglik.abs());
    }

    #[test]
    fn correlation_metrics_never_exceed_two(
        w in (1usize..12).prop_flat_map(simplex),
        rho in 0.05f64..20.0,
        sigma2 in 0.1f64..5.0,
        setting in 1u8..=5,
    ) {
        let s = isocov::evaluation::setting_truth(setting).unwrap();
        let est = SieveCovariance::new(w, rho, sigma2, 0.0).unwrap();
        let rep = metric_report(&s.truth, &est, s.h_m, 400, false);
        prop_assert!(rep.l2_corr <= 2.0 && rep.sup_corr <= 2.0);
    }
}

#[test]
fn lifted_warm_start_does_not_lose_likelihood() {
    let truth = ParametricCovariance::matern(1.0, 1.25, 1.0).unwrap();
    let data = simulate_gp(&truth, &study_sites(30, 12.0, 3), 8, 4).unwrap();
    let cfg = FitConfig::default();
    for m in [2usize, 3, 5] {
        let fit = fit_given_m(&data, m, &cfg).unwrap();
        let init = SieveState {
            weights: lift_weights(&fit.model.weights).unwrap(),
            rho: fit.model.rho,
            eta: 0.0,
        };
        let next = fit_from(&data, init, &cfg, 99).unwrap();
        assert!(next.loglik_per_obs >= fit.loglik_per_obs - 1e-6, "m = {m}");
    }
}

#[test]
fn semivariogram_and_covariance_reconstruct_the_sill() {
    let truth = ParametricCovariance::gaussian(1.0, 2.0).unwrap();
    let data = simulate_gp(&truth, &study_sites(25, 10.0, 8), 400, 9).unwrap();
    let s = empirical_summary(&data, None).unwrap();
    let worst = s
        .cov_hat
        .iter()
        .zip(&s.gamma_hat)
        .map(|(c, g)| (c - (s.sample_variance - g)).abs())
        .fold(0.0, f64::max);
    // per-site variances differ from the pooled one by Monte Carlo error only
    assert!(worst < 0.25, "{worst}");
    assert!((s.sample_variance - truth.eval(0.0)).abs() < 0.1);
}

#[test]
fn recovered_model_tracks_the_truth_end_to_end() {
    let truth = ParametricCovariance::matern(1.0, 1.25, 1.0).unwrap();
    let data = simulate_gp(&truth, &study_sites(60, 20.0, 21), 50, 22).unwrap();
    let fit = isocov::sieve_mle::fit_auto_m(&data, &FitConfig::default()).unwrap();
    let rep = metric_report(&truth, &fit.model, 10.3, 2000, false);
    assert!(rep.bias_c0.abs() < 0.1, "{rep:?}");
    assert!(rep.sup_corr < 0.08, "{rep:?}");
    assert!(fit.model.correlation(0.0) == 1.0);
}
