//! Acceptance criteria, one test per criterion.
//!
//! Every test writes a single `ACCEPT Cnn PASS|FAIL` line to stderr (bypassing
//! output capture) before asserting, so `cargo test --test acceptance` shows
//! the full scorecard even when criteria fail.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use isocov::approx::{select_min_m, MSearch};
use isocov::basis::{basis_all, basis_eval, basis_eval_beta, lift_weights};
use isocov::empirical::empirical_summary;
use isocov::evaluation::{mc_study, setting_truth, study_sites, Method, StudyConfig};
use isocov::gp_core::{cov_matrix, log_likelihood, simulate_gp, SpatialDataset};
use isocov::sieve_mle::{fit_given_m, m_schedule, FitConfig, FitResult};
use isocov::{IsotropicCovariance, ParametricCovariance, QuadratureConfig, SieveCovariance};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u8, pass: bool, detail: impl std::fmt::Display) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "ACCEPT C{id:02} {verdict}: {detail}");
}

fn random_simplex(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..m).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn random_sites(rng: &mut impl Rng, n: usize, side: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0..side))
}

#[test]
fn c01_basis_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let m = rng.random_range(1..=200usize);
        let k = rng.random_range(1..=m);
        let h = rng.random_range(0.0..50.0);
        let a = basis_eval(k, m, h).unwrap();
        let b = basis_eval_beta(k, m, h).unwrap();
        worst = worst.max(((a - b) / a).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-12 && elapsed < Duration::from_secs(5);
    report(1, pass, format!("max relative gap {worst:.2e} in {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn c02_lift_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(1..=40usize);
        let w = random_simplex(&mut rng, m);
        let lifted = lift_weights(&w).unwrap();
        assert_eq!(lifted.len(), m + 1);
        let (mut a, mut b) = (vec![0.0; m], vec![0.0; m + 1]);
        for _ in 0..50 {
            let h = rng.random_range(0.0..30.0);
            basis_all(m, h, &mut a);
            basis_all(m + 1, h, &mut b);
            let c: f64 = w.iter().zip(&a).map(|(w, a)| w * a).sum();
            let d: f64 = lifted.iter().zip(&b).map(|(w, a)| w * a).sum();
            worst = worst.max((c - d).abs());
        }
    }
    let pass = worst <= 1e-10;
    report(2, pass, format!("max pointwise error {worst:.2e}"));
    assert!(pass);
}

#[test]
fn c03_qp_model_orders() {
    let start = Instant::now();
    let grid: Vec<usize> = (1..=30).collect();
    let q = QuadratureConfig::default();
    let pick = |c: ParametricCovariance| {
        select_min_m(|h| c.continuous_part(h), 0.05, &grid, &q, MSearch::Linear)
            .unwrap()
            .result
            .m
    };
    let matern = pick(ParametricCovariance::matern(1.0, 1.0, 1.0).unwrap());
    let gaussian = pick(ParametricCovariance::gaussian(1.0, 1.0).unwrap());
    let elapsed = start.elapsed();
    let pass = matern == 3 && gaussian == 4 && elapsed < Duration::from_secs(60);
    report(
        3,
        pass,
        format!("Matern(1,1,1) -> m={matern} (want 3), Gaussian(1,1) -> m={gaussian} (want 4) in {elapsed:.2?}"),
    );
    assert_eq!((matern, gaussian), (3, 4));
    assert!(elapsed < Duration::from_secs(60));
}

/// Long-running: `cargo test --release --test acceptance -- --ignored`.
#[test]
#[ignore]
fn c03_qp_model_order_cauchy() {
    let grid: Vec<usize> = (1..=1000).collect();
    let c = ParametricCovariance::cauchy(1.0, 1.0).unwrap();
    let sel = select_min_m(|h| c.continuous_part(h), 0.05, &grid, &QuadratureConfig::slow_decay(), MSearch::Bisect).unwrap();
    let m = sel.result.m;
    let pass = sel.qualified && m.abs_diff(461) <= 5;
    report(3, pass, format!("Cauchy(1,1) -> m={m} (want 461 +/- 5), RAE {:.4}", sel.result.rae));
    assert!(pass);
}

/// `−(r/2) log det Σ − ½ Σ_j y_jᵀ Σ⁻¹ y_j − (rn/2) log 2π` with an explicit inverse and an LU determinant.
fn dense_oracle(sigma: &DMatrix<f64>, obs: &DMatrix<f64>) -> f64 {
    let (r, n) = obs.shape();
    let inv = sigma.clone().try_inverse().expect("invertible");
    let det = sigma.clone().lu().determinant();
    let quad: f64 = (0..r)
        .map(|j| {
            let y = obs.row(j).transpose();
            (y.transpose() * &inv * &y)[(0, 0)]
        })
        .sum();
    -0.5 * r as f64 * det.ln() - 0.5 * quad - 0.5 * (r * n) as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[test]
fn c04_likelihood_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let n = rng.random_range(1..=6usize);
        let r = rng.random_range(1..=3usize);
        let coords = random_sites(&mut rng, n, 5.0);
        let nugget = rng.random_range(0.05..0.5);
        let model: Box<dyn IsotropicCovariance> = if i % 2 == 0 {
            let m = rng.random_range(1..=8usize);
            Box::new(SieveCovariance::new(random_simplex(&mut rng, m), rng.random_range(0.3..3.0), rng.random_range(0.5..2.0), nugget).unwrap())
        } else {
            Box::new(
                ParametricCovariance::matern(rng.random_range(0.5..2.0), rng.random_range(0.3..3.0), rng.random_range(0.3..2.5))
                    .unwrap()
                    .with_nugget(nugget)
                    .unwrap(),
            )
        };
        let obs = DMatrix::from_fn(r, n, |_, _| rng.random_range(-2.0..2.0));
        let data = SpatialDataset::new(coords.clone(), obs.clone(), None).unwrap();
        let got = log_likelihood(model.as_ref(), &data).unwrap();
        let want = dense_oracle(&cov_matrix(model.as_ref(), &coords), &obs);
        worst = worst.max(((got - want) / want).abs());
    }
    let pass = worst <= 1e-9;
    report(4, pass, format!("max relative gap {worst:.2e} over 200 instances"));
    assert!(pass);
}

/// Small random problems shared by the ascent and profile criteria.
fn random_fits(seed: u64, count: usize) -> Vec<(SpatialDataset, FitResult)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = rng.random_range(10..=25usize);
            let r = rng.random_range(2..=8usize);
            let coords = random_sites(&mut rng, n, 10.0);
            let truth = ParametricCovariance::matern(rng.random_range(0.5..2.0), rng.random_range(0.5..3.0), rng.random_range(0.5..2.0)).unwrap();
            let data = simulate_gp(&truth, &coords, r, rng.random()).unwrap();
            let cfg = FitConfig {
                seed: rng.random(),
                include_nugget: i % 3 == 0,
                ..FitConfig::default()
            };
            let m = rng.random_range(1..=8usize);
            let fit = fit_given_m(&data, m, &cfg).unwrap();
            (data, fit)
        })
        .collect()
}

#[test]
fn c05_ascent_is_monotone() {
    let fits = random_fits(5, 50);
    let mut violations = 0;
    let mut steps = 0;
    for (_, fit) in &fits {
        steps += fit.trace.len().saturating_sub(1);
        violations += fit.trace.windows(2).filter(|p| p[1].loglik_per_obs < p[0].loglik_per_obs).count();
    }
    let pass = violations == 0;
    report(5, pass, format!("{violations} decreases over {steps} recorded steps in 50 fits"));
    assert!(pass);
}

#[test]
fn c06_profile_variance_is_optimal() {
    let fits = random_fits(6, 50);
    // relative grid over σ² on [σ̂²/e, e σ̂²]
    let steps = 2001;
    let dt = 2.0 / (steps - 1) as f64;
    let mut worst_gain = f64::NEG_INFINITY;
    let mut worst_offset: f64 = 0.0;
    for (data, fit) in &fits {
        let model = &fit.model;
        let ll_hat = log_likelihood(model, data).unwrap();
        let ratio = model.nugget / model.sigma2;
        let (mut best_t, mut best_ll) = (0.0, f64::NEG_INFINITY);
        for i in 0..steps {
            let t = -1.0 + i as f64 * dt;
            let s2 = model.sigma2 * t.exp();
            let scaled = SieveCovariance::new(model.weights.clone(), model.rho, s2, ratio * s2).unwrap();
            let ll = log_likelihood(&scaled, data).unwrap();
            if ll > best_ll {
                best_ll = ll;
                best_t = t;
            }
        }
        worst_gain = worst_gain.max((best_ll - ll_hat) / ll_hat.abs());
        worst_offset = worst_offset.max(best_t.abs());
    }
    let pass = worst_gain <= 1e-12 && worst_offset <= dt;
    report(
        6,
        pass,
        format!("largest grid gain {worst_gain:.2e} (relative), grid optimum within {worst_offset:.1e} of closed form (step {dt:.1e})"),
    );
    assert!(pass);
}

#[test]
fn c07_desk_scale_setting_one() {
    let start = Instant::now();
    let cfg = StudyConfig {
        setting: 1,
        n_sites: 60,
        domain: 20.0,
        r: 50,
        n_mc: 10,
        methods: vec![Method::SieveMle],
        ..StudyConfig::default()
    };
    let rep = mc_study(&cfg).unwrap();
    let m = &rep.methods[0];
    let runs: Vec<_> = m.runs.iter().flatten().collect();
    let mean_abs_bias = runs.iter().map(|r| r.bias_c0.abs()).sum::<f64>() / runs.len() as f64;
    let mean_sup = m.mean.sup_corr;
    let elapsed = start.elapsed();
    let pass = m.n_failed == 0 && mean_abs_bias <= 0.07 && mean_sup <= 0.06 && elapsed <= Duration::from_secs(900);
    report(
        7,
        pass,
        format!(
            "mean |bias| {mean_abs_bias:.4} (<= 0.07), mean sup corr error {mean_sup:.4} (<= 0.06), {} failures, {elapsed:.1?}",
            m.n_failed
        ),
    );
    assert!(pass);
}

#[test]
fn c08_setting_constants() {
    let expected: [(ParametricCovariance, f64); 5] = [
        (ParametricCovariance::matern(1.0, 1.25, 1.0).unwrap(), 10.3),
        (ParametricCovariance::cauchy(1.0, 0.8).unwrap(), 16.0),
        (ParametricCovariance::gaussian(1.0, 3.0).unwrap(), 7.9),
        (ParametricCovariance::gen_cauchy(1.0, 0.3, 0.5, 2.0).unwrap(), 13.3),
        (ParametricCovariance::linear_matern(1.0, 1.25, 3.0 * 2f64.sqrt() / 4.0, 1.0, 2.0).unwrap(), 10.5),
    ];
    let mut pass = setting_truth(0).is_err() && setting_truth(6).is_err();
    for (i, (truth, h_m)) in expected.iter().enumerate() {
        let s = setting_truth(i as u8 + 1).unwrap();
        pass &= s.truth == *truth && s.h_m == *h_m && s.truth.nugget == 0.0;
    }
    report(8, pass, "five settings and h_m = (10.3, 16, 7.9, 13.3, 10.5)");
    assert!(pass);
}

#[test]
fn c09_m_schedule() {
    let s = m_schedule(12_000, &FitConfig::default().m_schedule_exponents);
    let want = [2, 3, 5, 7, 11, 17, 27, 43, 69];
    let pass = s.len() >= want.len() && s[..want.len()] == want;
    report(9, pass, format!("schedule for rn = 12000 is {s:?}"));
    assert!(pass);
}

#[test]
fn c10_empirical_covariance_sanity() {
    let truth = setting_truth(1).unwrap().truth;
    let coords = study_sites(20, 8.0, 10);
    let data = simulate_gp(&truth, &coords, 5000, 10).unwrap();
    let summary = empirical_summary(&data, None).unwrap();
    let r = data.n_replicates();
    let n = data.n_sites();
    let mut inside = 0;
    for (g, &h) in summary.distances.iter().enumerate() {
        // replicate-level means over the pairs at this distance give an independent SE
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .filter(|&(i, j)| data.distance(i, j) == h)
            .collect();
        assert_eq!(pairs.len(), summary.pair_counts[g]);
        let per_rep: Vec<f64> = (0..r)
            .map(|k| pairs.iter().map(|&(i, j)| data.obs[(k, i)] * data.obs[(k, j)]).sum::<f64>() / pairs.len() as f64)
            .collect();
        let mean = per_rep.iter().sum::<f64>() / r as f64;
        let sd = (per_rep.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64).sqrt();
        assert!((mean - summary.cov_hat[g]).abs() < 1e-12);
        if (summary.cov_hat[g] - truth.eval(h)).abs() <= 3.0 * sd / (r as f64).sqrt() {
            inside += 1;
        }
    }
    let frac = inside as f64 / summary.len() as f64;
    let pass = frac >= 0.95;
    report(10, pass, format!("{inside}/{} distances within 3 SE ({:.1}%)", summary.len(), 100.0 * frac));
    assert!(pass);
}

#[test]
fn c11_increasing_domain_trend() {
    let mut medians = Vec::new();
    for n in [40usize, 80, 160] {
        let cfg = StudyConfig {
            setting: 1,
            n_sites: n,
            domain: 20.0 * (n as f64 / 60.0).sqrt(),
            r: 50,
            n_mc: 5,
            methods: vec![Method::SieveMle],
            seed: 11,
            ..StudyConfig::default()
        };
        let rep = mc_study(&cfg).unwrap();
        medians.push(rep.methods[0].median(|r| r.sup_corr));
    }
    let pass = medians.windows(2).all(|p| p[1] <= p[0]);
    report(11, pass, format!("median sup corr error at n = 40, 80, 160: {medians:.4?}"));
    assert!(pass);
}

fn run_cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_isocov"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(matches!(out.status.code(), Some(0 | 3)), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn c12_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("study.toml"), "n_sites = 15\nr = 5\nn_mc = 3\nK = 200\n").unwrap();
    std::fs::write(
        d.join("panel.csv"),
        "station,lon,lat,year_2000,year_2001,year_2002\nA,-100,40,1.0,2.5,0.5\nB,-98,41,3.0,,1\nC,-99,39,2.0,2.0,4\nD,-97.5,40.2,0.1,1.5,2\n",
    )
    .unwrap();
    let commands: [&[&str]; 6] = [
        &["simulate", "--seed", "3"],
        &["fit", "--data", "sim_a/data.csv", "--seed", "3"],
        &["evaluate", "--estimate", "fit_a/fit.json"],
        &["approximate"],
        &["mc-study", "--config", "study.toml", "--seed", "3"],
        &["ingest", "--data", "panel.csv"],
    ];
    let names = ["sim", "fit", "evaluate", "approximate", "study", "ingest"];
    let mut identical = 0;
    for (cmd, name) in commands.iter().zip(names) {
        for (tag, threads) in [("a", "1"), ("b", "4")] {
            let out = format!("{name}_{tag}");
            let mut args = cmd.to_vec();
            args.extend(["--out", &out, "--threads", threads]);
            run_cli(d, &args);
        }
        let a = snapshot(&d.join(format!("{name}_a")));
        let b = snapshot(&d.join(format!("{name}_b")));
        assert!(!a.is_empty());
        if a == b {
            identical += 1;
        }
    }
    let pass = identical == commands.len();
    report(12, pass, format!("{identical}/{} commands byte-identical on rerun", commands.len()));
    assert!(pass);
}
