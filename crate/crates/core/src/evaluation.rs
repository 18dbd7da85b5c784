//! Error metrics, the five simulation settings, and the Monte Carlo study harness.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::IsotropicCovariance;
use crate::empirical::{decode, empirical_summary, starting_points, wls_fit, WeightScheme, WlsModel, WlsSpec, WlsTarget};
use crate::error::{Error, Result};
use crate::gp_core::{build_cov_matrix, simulate_gp, SpatialDataset};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::parametric::{Family, ParametricCovariance};
use crate::sieve_mle::{fit_auto_m, fit_given_m, FitConfig};

pub const DEFAULT_GRID: usize = 2000;

/// `h_i = (i/K) h_m` for `i = 1..K`.
pub fn metric_grid(h_m: f64, k: usize) -> impl Iterator<Item = f64> {
    (1..=k).map(move |i| i as f64 / k as f64 * h_m)
}

/// Root mean square of `truth − estimate` over the metric grid.
pub fn scaled_l2_error(truth: impl Fn(f64) -> f64, estimate: impl Fn(f64) -> f64, h_m: f64, k: usize) -> f64 {
    let ss: f64 = metric_grid(h_m, k).map(|h| (truth(h) - estimate(h)).powi(2)).sum();
    (ss / k as f64).sqrt()
}

/// Max of `|truth − estimate|` over the metric grid.
pub fn sup_error(truth: impl Fn(f64) -> f64, estimate: impl Fn(f64) -> f64, h_m: f64, k: usize) -> f64 {
    metric_grid(h_m, k).map(|h| (truth(h) - estimate(h)).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub id: u8,
    pub truth: ParametricCovariance,
    pub h_m: f64,
}

/// The true covariance and metric range of simulation setting `id` (1 to 5).
pub fn setting_truth(id: u8) -> Result<Setting> {
    let (truth, h_m) = match id {
        1 => (ParametricCovariance::matern(1.0, 1.25, 1.0)?, 10.3),
        2 => (ParametricCovariance::cauchy(1.0, 0.8)?, 16.0),
        3 => (ParametricCovariance::gaussian(1.0, 3.0)?, 7.9),
        4 => (ParametricCovariance::gen_cauchy(1.0, 0.3, 0.5, 2.0)?, 13.3),
        5 => (ParametricCovariance::linear_matern(1.0, 1.25, 3.0 * 2f64.sqrt() / 4.0, 1.0, 2.0)?, 10.5),
        _ => return Err(Error::domain(format!("setting id must be in 1..=5, got {id}"))),
    };
    Ok(Setting { id, truth, h_m })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bias_c0: f64,
    pub l2_corr: f64,
    pub sup_corr: f64,
    pub l2_cov: f64,
    pub sup_cov: f64,
    pub l2_gamma: f64,
    pub sup_gamma: f64,
    pub h_m: f64,
    #[serde(rename = "K")]
    pub k: usize,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 7] = ["bias_c0", "l2_corr", "sup_corr", "l2_cov", "sup_cov", "l2_gamma", "sup_gamma"];

    pub fn values(&self) -> [f64; 7] {
        [self.bias_c0, self.l2_corr, self.sup_corr, self.l2_cov, self.sup_cov, self.l2_gamma, self.sup_gamma]
    }

    fn from_values(v: [f64; 7], h_m: f64, k: usize) -> Self {
        MetricReport {
            bias_c0: v[0],
            l2_corr: v[1],
            sup_corr: v[2],
            l2_cov: v[3],
            sup_cov: v[4],
            l2_gamma: v[5],
            sup_gamma: v[6],
            h_m,
            k,
        }
    }
}

/// Correlation `Ĉ(h)/Ĉ(0)`; the nugget enters the denominator only when requested.
fn correlation_of(model: &dyn IsotropicCovariance, h: f64, include_nugget: bool) -> f64 {
    let denom = if include_nugget { model.partial_sill() + model.nugget() } else { model.partial_sill() };
    model.continuous_part(h) / denom
}

/// All seven metrics of `estimate` against `truth` on the grid `(i/K) h_m`.
pub fn metric_report(
    truth: &dyn IsotropicCovariance,
    estimate: &dyn IsotropicCovariance,
    h_m: f64,
    k: usize,
    include_nugget: bool,
) -> MetricReport {
    let (t, e) = (truth, estimate);
    let ct = |h: f64| correlation_of(t, h, include_nugget);
    let ce = |h: f64| correlation_of(e, h, include_nugget);
    MetricReport {
        bias_c0: e.eval(0.0) - t.eval(0.0),
        l2_corr: scaled_l2_error(ct, ce, h_m, k),
        sup_corr: sup_error(ct, ce, h_m, k),
        l2_cov: scaled_l2_error(|h| t.eval(h), |h| e.eval(h), h_m, k),
        sup_cov: sup_error(|h| t.eval(h), |h| e.eval(h), h_m, k),
        l2_gamma: scaled_l2_error(|h| t.semivariogram(h), |h| e.semivariogram(h), h_m, k),
        sup_gamma: sup_error(|h| t.semivariogram(h), |h| e.semivariogram(h), h_m, k),
        h_m,
        k,
    }
}

/// Maximum-likelihood fit of a parametric family with `σ²` profiled out.
pub fn fit_parametric_mle(data: &SpatialDataset, family: Family) -> Result<(ParametricCovariance, f64)> {
    let n_obs = data.n_obs() as f64;
    let profile = |p: Vec<f64>| -> Option<(f64, f64)> {
        let shape = ParametricCovariance::new(family, p, 0.0).ok()?;
        let h = build_cov_matrix(&shape, &data.coords).ok()?;
        let q = h.quadratic_form_sum(&data.obs);
        let s2 = q / n_obs;
        let r = data.n_replicates() as f64;
        let ll = -0.5 * r * h.logdet - 0.5 * n_obs * (s2.ln() + 1.0 + (2.0 * std::f64::consts::PI).ln());
        ll.is_finite().then_some((ll, s2))
    };
    let objective = |z: &[f64]| decode(family, z).and_then(&profile).map_or(f64::INFINITY, |v| -v.0);
    let dist = data.distance_summary()?;
    let starts = starting_points(family, dist.min_positive, dist.max);
    let z0 = starts
        .into_iter()
        .map(|z| (objective(&z), z))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, z)| z)
        .expect("at least one start");
    let opts = NelderMeadOptions {
        max_evals: 800,
        f_tol: 1e-10,
        x_tol: 1e-6,
        ..Default::default()
    };
    let min = nelder_mead(objective, &z0, &opts);
    let mut params = decode(family, &min.x).ok_or_else(|| Error::Convergence {
        context: format!("{family} likelihood search left the feasible region"),
        iterations: min.evals,
        best: min.x.clone(),
    })?;
    let (ll, s2) = profile(params.clone()).ok_or_else(|| Error::Conditioning {
        context: format!("{family} covariance at the optimum is not factorizable"),
        smallest_pivot: f64::NAN,
    })?;
    params[0] = s2;
    Ok((ParametricCovariance::new(family, params, 0.0)?, ll))
}

/// An estimator compared in the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Method {
    /// The true covariance itself; every error is zero.
    Truth,
    /// Sieve MLE with the order chosen from the schedule.
    SieveMle,
    SieveMleFixed { m: usize },
    Wls { target: WlsTarget, weights: WeightScheme, model: WlsModel },
    ParametricMle { family: Family },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Truth => "truth".into(),
            Method::SieveMle => "sieve_mle".into(),
            Method::SieveMleFixed { m } => format!("sieve_mle_m{m}"),
            Method::Wls { target, weights, model } => {
                let t = match target {
                    WlsTarget::Covariance => "cov",
                    WlsTarget::Semivariogram => "vgm",
                };
                let w = match weights {
                    WeightScheme::Uniform => "uniform",
                    WeightScheme::PairCount => "paircount",
                    WeightScheme::User(_) => "user",
                };
                let m = match model {
                    WlsModel::Parametric(f) => f.to_string(),
                    WlsModel::Sieve { m } => format!("sieve{m}"),
                };
                format!("wls_{t}_{m}_{w}")
            }
            Method::ParametricMle { family } => format!("mle_{family}"),
        }
    }

    /// The default comparison set: sieve MLE, sieve WLS on covariance and semivariogram, and Matérn MLE.
    pub fn default_set() -> Vec<Method> {
        vec![
            Method::SieveMle,
            Method::Wls {
                target: WlsTarget::Covariance,
                weights: WeightScheme::PairCount,
                model: WlsModel::Sieve { m: 5 },
            },
            Method::Wls {
                target: WlsTarget::Semivariogram,
                weights: WeightScheme::PairCount,
                model: WlsModel::Sieve { m: 5 },
            },
            Method::ParametricMle { family: Family::Matern },
        ]
    }

    /// Fits the method and returns the estimated covariance.
    pub fn estimate(&self, data: &SpatialDataset, truth: &ParametricCovariance, fit: &FitConfig) -> Result<Box<dyn IsotropicCovariance>> {
        Ok(match self {
            Method::Truth => Box::new(truth.clone()),
            Method::SieveMle => Box::new(fit_auto_m(data, fit)?.model),
            Method::SieveMleFixed { m } => Box::new(fit_given_m(data, *m, fit)?.model),
            Method::Wls { target, weights, model } => {
                let summary = empirical_summary(data, None)?;
                let spec = WlsSpec::new(*target, weights.clone(), *model);
                let w = wls_fit(&summary, &spec)?;
                Box::new(OwnedWlsEstimate(w))
            }
            Method::ParametricMle { family } => Box::new(fit_parametric_mle(data, *family)?.0),
        })
    }
}

struct OwnedWlsEstimate(crate::empirical::WlsFit);

impl IsotropicCovariance for OwnedWlsEstimate {
    fn continuous_part(&self, h: f64) -> f64 {
        self.0.estimate().continuous_part(h)
    }

    fn nugget(&self) -> f64 {
        self.0.estimate().nugget()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub setting: u8,
    pub n_sites: usize,
    /// Side length of the square domain `[0, L]²`.
    pub domain: f64,
    pub r: usize,
    pub n_mc: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    /// Include the nugget in the correlation denominator.
    pub include_nugget_in_corr: bool,
    pub fit: FitConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            setting: 1,
            n_sites: 60,
            domain: 20.0,
            r: 50,
            n_mc: 10,
            methods: Method::default_set(),
            seed: 2024,
            k: DEFAULT_GRID,
            include_nugget_in_corr: false,
            fit: FitConfig::default(),
        }
    }
}

impl StudyConfig {
    /// `r = 200` replicates and `100` Monte Carlo runs.
    pub fn full_scale(self) -> Self {
        StudyConfig { r: 200, n_mc: 100, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: MetricReport,
    pub sd: MetricReport,
    /// Per-run reports in run order; `None` marks a failed run.
    pub runs: Vec<Option<MetricReport>>,
    pub failures: Vec<String>,
}

impl MethodSummary {
    /// Median of one metric over the successful runs.
    pub fn median(&self, metric: impl Fn(&MetricReport) -> f64) -> f64 {
        let mut v: Vec<f64> = self.runs.iter().flatten().map(metric).collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub setting: u8,
    pub h_m: f64,
    pub n_sites: usize,
    pub r: usize,
    pub n_mc: usize,
    pub seed: u64,
    pub methods: Vec<MethodSummary>,
}

impl StudyReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Comma-separated table of `mean (sd)` per method and metric, in units of `1e-2`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("method,n_ok,n_failed");
        for c in MetricReport::COLUMNS {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for m in &self.methods {
            let _ = write!(out, "{},{},{}", m.method, m.n_ok, m.n_failed);
            for (mu, sd) in m.mean.values().iter().zip(m.sd.values()) {
                let _ = write!(out, ",{:.2} ({:.2})", 100.0 * mu, 100.0 * sd);
            }
            out.push('\n');
        }
        out
    }
}

/// `n` sites uniform on `[0, side]²`.
pub fn study_sites(n: usize, side: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0..side))
}

fn run_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Simulate, fit and score `n_mc` datasets at one fixed site draw.
pub fn mc_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let setting = setting_truth(cfg.setting)?;
    if cfg.n_sites < 2 || cfg.r == 0 || cfg.n_mc == 0 || cfg.k == 0 {
        return Err(Error::validation("study needs n_sites >= 2 and positive r, n_mc and K"));
    }
    if !(cfg.domain > 0.0) {
        return Err(Error::validation("domain side must be positive"));
    }
    if cfg.methods.is_empty() {
        return Err(Error::validation("study needs at least one method"));
    }
    let coords = study_sites(cfg.n_sites, cfg.domain, cfg.seed);
    let seeds = run_seeds(cfg.seed, cfg.n_mc);

    let per_run: Vec<Vec<std::result::Result<MetricReport, String>>> = seeds
        .par_iter()
        .map(|&s| {
            let data = match simulate_gp(&setting.truth, &coords, cfg.r, s) {
                Ok(d) => d,
                Err(e) => return vec![Err(e.to_string()); cfg.methods.len()],
            };
            let fit = FitConfig { seed: s, ..cfg.fit.clone() };
            cfg.methods
                .iter()
                .map(|m| {
                    m.estimate(&data, &setting.truth, &fit)
                        .map(|est| metric_report(&setting.truth, est.as_ref(), setting.h_m, cfg.k, cfg.include_nugget_in_corr))
                        .map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();

    let methods = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let runs: Vec<Option<MetricReport>> = per_run.iter().map(|r| r[j].as_ref().ok().copied()).collect();
            let failures: Vec<String> = per_run.iter().filter_map(|r| r[j].as_ref().err().cloned()).collect();
            let ok: Vec<[f64; 7]> = runs.iter().flatten().map(|r| r.values()).collect();
            let (mean, sd) = mean_sd(&ok);
            MethodSummary {
                method: m.name(),
                n_ok: ok.len(),
                n_failed: failures.len(),
                mean: MetricReport::from_values(mean, setting.h_m, cfg.k),
                sd: MetricReport::from_values(sd, setting.h_m, cfg.k),
                runs,
                failures,
            }
        })
        .collect();
    Ok(StudyReport {
        setting: cfg.setting,
        h_m: setting.h_m,
        n_sites: cfg.n_sites,
        r: cfg.r,
        n_mc: cfg.n_mc,
        seed: cfg.seed,
        methods,
    })
}

fn mean_sd(rows: &[[f64; 7]]) -> ([f64; 7], [f64; 7]) {
    let mut mean = [f64::NAN; 7];
    let mut sd = [f64::NAN; 7];
    let n = rows.len();
    if n == 0 {
        return (mean, sd);
    }
    for c in 0..7 {
        let mu = rows.iter().map(|r| r[c]).sum::<f64>() / n as f64;
        mean[c] = mu;
        sd[c] = if n > 1 {
            (rows.iter().map(|r| (r[c] - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
    }
    (mean, sd)
}
