//! Per-command configuration and execution.

use std::fmt::Write as _;

use isocov::approx::{select_min_m, MSearch};
use isocov::empirical::detrend_two_way_anova;
use isocov::evaluation::{metric_report, mc_study, setting_truth, study_sites, Method, StudyConfig, DEFAULT_GRID};
use isocov::gp_core::{simulate_gp, SpatialDataset};
use isocov::sieve_mle::{fit_auto_m, fit_given_m, FitConfig, FitResult};
use isocov::{Family, IsotropicCovariance, ParametricCovariance, QuadratureConfig, SieveCovariance};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::artifacts::{Artifacts, RunManifest};
use crate::data::{project_equirectangular, read_dataset, read_panel, write_dataset};
use crate::{Failure, Overrides};

/// Result of a command: the artifacts plus an optional convergence warning.
pub struct Outcome {
    pub artifacts: Artifacts,
    pub warning: Option<String>,
}

fn to_toml<T: Serialize>(cfg: &T) -> String {
    toml::to_string(cfg).expect("configs serialize to TOML")
}

fn curve_grid(h_max: f64, points: usize) -> impl Iterator<Item = f64> {
    (0..=points).map(move |i| h_max * i as f64 / points as f64)
}

fn check_points(points: usize) -> Result<(), Failure> {
    if points == 0 {
        return Err(Failure::usage("curve_points must be positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub family: Family,
    pub params: Vec<f64>,
    pub nugget: f64,
    pub n_sites: usize,
    /// Sites are uniform on `[0, domain]²`.
    pub domain: f64,
    pub r: usize,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            family: Family::Matern,
            params: vec![1.0, 1.25, 1.0],
            nugget: 0.0,
            n_sites: 60,
            domain: 20.0,
            r: 50,
            seed: 0,
        }
    }
}

impl SimulateConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.full_scale {
            self.r = 200;
        }
    }

    pub fn run(&self) -> Result<Outcome, Failure> {
        if self.n_sites == 0 || !(self.domain > 0.0) {
            return Err(Failure::usage("n_sites and domain must be positive"));
        }
        let truth = ParametricCovariance::new(self.family, self.params.clone(), self.nugget)?;
        let coords = study_sites(self.n_sites, self.domain, self.seed);
        let data = simulate_gp(&truth, &coords, self.r, self.seed)?;
        let mut art = Artifacts::new(RunManifest::new("simulate", &to_toml(self), self.seed));
        art.table("data.csv", write_dataset(&data));
        art.json("truth.json", &truth)?;
        Ok(Outcome {
            artifacts: art,
            warning: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproximateConfig {
    pub family: Family,
    pub params: Vec<f64>,
    pub threshold: f64,
    pub m_grid: Vec<usize>,
    pub search: MSearch,
    pub curve_points: usize,
    /// Upper end of the plotted curve.
    pub curve_h_max: f64,
    pub quadrature: QuadratureConfig,
}

impl Default for ApproximateConfig {
    fn default() -> Self {
        ApproximateConfig {
            family: Family::Matern,
            params: vec![1.0, 1.0, 1.0],
            threshold: 0.05,
            m_grid: (1..=100).collect(),
            search: MSearch::Linear,
            curve_points: 200,
            curve_h_max: 10.0,
            quadrature: QuadratureConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct ApproxRecord<'a> {
    family: Family,
    params: &'a [f64],
    threshold: f64,
    selection: &'a isocov::approx::MSelection,
}

impl ApproximateConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.m {
            self.m_grid = vec![m];
        }
    }

    pub fn run(&self) -> Result<Outcome, Failure> {
        check_points(self.curve_points)?;
        let target = ParametricCovariance::new(self.family, self.params.clone(), 0.0)?;
        let c0 = |h: f64| target.continuous_part(h);
        let sel = select_min_m(c0, self.threshold, &self.m_grid, &self.quadrature, self.search)?;
        let mut curve = String::from("h,c0,c_hat\n");
        for h in curve_grid(self.curve_h_max, self.curve_points) {
            let _ = writeln!(curve, "{h},{},{}", c0(h), sel.result.eval(h));
        }
        let mut art = Artifacts::new(RunManifest::new("approximate", &to_toml(self), 0));
        art.json(
            "approx.json",
            &ApproxRecord {
                family: self.family,
                params: &self.params,
                threshold: self.threshold,
                selection: &sel,
            },
        )?;
        art.table("curve.csv", curve);
        let warning = (!sel.qualified).then(|| {
            format!(
                "no order in the grid reached RAE {}; reporting m = {} with RAE {:.4}",
                self.threshold, sel.result.m, sel.result.rae
            )
        });
        Ok(Outcome { artifacts: art, warning })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitCommandConfig {
    /// Fit a single order instead of walking the schedule.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Remove site and replicate effects with a two-way ANOVA before fitting.
    pub detrend: bool,
    pub curve_points: usize,
    /// Upper end of the plotted curves; the largest pairwise distance when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve_h_max: Option<f64>,
    pub fit: FitConfig,
}

impl Default for FitCommandConfig {
    fn default() -> Self {
        FitCommandConfig {
            m: None,
            detrend: false,
            curve_points: 200,
            curve_h_max: None,
            fit: FitConfig::default(),
        }
    }
}

impl FitCommandConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.fit.seed = s;
        }
        if o.m.is_some() {
            self.m = o.m;
        }
        self.fit.include_nugget |= o.nugget;
        self.detrend |= o.detrend;
    }

    pub fn run(&self, input: &std::path::Path) -> Result<Outcome, Failure> {
        check_points(self.curve_points)?;
        let text = std::fs::read_to_string(input).map_err(|e| Failure::io(input, e))?;
        let mut data = read_dataset(&text)?;
        if self.detrend {
            let anova = detrend_two_way_anova(&data.obs.transpose())?;
            data = anova.into_dataset(data.coords.clone(), data.labels.clone())?;
        }
        let fit = match self.m {
            Some(m) => fit_given_m(&data, m, &self.fit)?,
            None => fit_auto_m(&data, &self.fit)?,
        };
        let h_max = match self.curve_h_max {
            Some(h) => h,
            None => data.distance_summary()?.max,
        };
        let mut art = Artifacts::new(RunManifest::new("fit", &to_toml(self), self.fit.seed));
        art.manifest_mut().add_input(input, text.as_bytes());
        art.json("fit.json", &fit)?;
        art.table("candidates.csv", candidate_table(&fit));
        art.table("curve.csv", fit_curve(&fit.model, h_max, self.curve_points));
        let warning = (!fit.converged).then(|| "the alternating ascent hit its iteration cap".to_string());
        Ok(Outcome { artifacts: art, warning })
    }
}

fn candidate_table(fit: &FitResult) -> String {
    let mut out = String::from("m,loglik_per_rn,nugget,c0,converged,error\n");
    for c in &fit.m_candidates {
        match (&c.model, c.loglik_per_obs) {
            (Some(model), Some(ll)) => {
                let _ = writeln!(out, "{},{ll},{},{},{},", c.m, model.nugget, model.sigma2 + model.nugget, c.converged);
            }
            _ => {
                let err = c.error.as_deref().unwrap_or("failed").replace([',', '\n'], ";");
                let _ = writeln!(out, "{},,,,false,{err}", c.m);
            }
        }
    }
    out
}

fn fit_curve(model: &SieveCovariance, h_max: f64, points: usize) -> String {
    let mut out = String::from("h,cov,corr,gamma\n");
    for h in curve_grid(h_max, points) {
        let _ = writeln!(
            out,
            "{h},{},{},{}",
            model.eval(h),
            model.correlation(h),
            model.semivariogram(h)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Simulation setting whose true covariance is the reference (1 to 5).
    pub setting: u8,
    #[serde(rename = "K")]
    pub k: usize,
    pub include_nugget_in_corr: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            setting: 1,
            k: DEFAULT_GRID,
            include_nugget_in_corr: false,
        }
    }
}

impl EvaluateConfig {
    pub fn run(&self, estimate: &std::path::Path) -> Result<Outcome, Failure> {
        if self.k == 0 {
            return Err(Failure::usage("K must be positive"));
        }
        let text = std::fs::read_to_string(estimate).map_err(|e| Failure::io(estimate, e))?;
        let model = read_sieve_model(&text)?;
        let setting = setting_truth(self.setting)?;
        let report = metric_report(&setting.truth, &model, setting.h_m, self.k, self.include_nugget_in_corr);
        let mut art = Artifacts::new(RunManifest::new("evaluate", &to_toml(self), 0));
        art.manifest_mut().add_input(estimate, text.as_bytes());
        art.json("metrics.json", &report)?;
        Ok(Outcome {
            artifacts: art,
            warning: None,
        })
    }
}

/// Accepts a `fit.json` artifact or a bare sieve model record.
fn read_sieve_model(text: &str) -> Result<SieveCovariance, Failure> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Failure::usage(format!("estimate is not JSON: {e}")))?;
    let node = v
        .pointer("/result/model")
        .or_else(|| v.get("model"))
        .unwrap_or(&v)
        .clone();
    let model: SieveCovariance =
        serde_json::from_value(node).map_err(|e| Failure::usage(format!("estimate is not a sieve model: {e}")))?;
    model.validate()?;
    Ok(model)
}

pub fn study_apply(cfg: &mut StudyConfig, o: &Overrides) {
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if o.full_scale {
        *cfg = cfg.clone().full_scale();
    }
    if let Some(m) = o.m {
        for method in &mut cfg.methods {
            if *method == Method::SieveMle {
                *method = Method::SieveMleFixed { m };
            }
        }
    }
    cfg.fit.include_nugget |= o.nugget;
}

pub fn run_study(cfg: &StudyConfig) -> Result<Outcome, Failure> {
    let report = mc_study(cfg)?;
    let mut art = Artifacts::new(RunManifest::new("mc-study", &to_toml(cfg), cfg.seed));
    art.table("study.csv", report.to_table());
    art.json("study.json", &report)?;
    let failed: usize = report.methods.iter().map(|m| m.n_failed).sum();
    let warning = (failed > 0).then(|| format!("{failed} method fits failed; see study.json"));
    Ok(Outcome { artifacts: art, warning })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Remove station and year effects with a two-way ANOVA.
    pub detrend: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { detrend: true }
    }
}

#[derive(Serialize)]
struct IngestReport {
    n_stations: usize,
    n_included: usize,
    n_excluded: usize,
    excluded: Vec<String>,
    years: Vec<String>,
    min_distance_km: f64,
    median_distance_km: f64,
    max_distance_km: f64,
    projection: crate::data::Projection,
    #[serde(skip_serializing_if = "Option::is_none")]
    grand_mean: Option<f64>,
}

impl IngestConfig {
    pub fn apply(&mut self, o: &Overrides) {
        self.detrend |= o.detrend;
    }

    pub fn run(&self, input: &std::path::Path) -> Result<Outcome, Failure> {
        let text = std::fs::read_to_string(input).map_err(|e| Failure::io(input, e))?;
        let panel = read_panel(&text)?;
        let keep: Vec<usize> = (0..panel.stations.len())
            .filter(|&i| panel.values[i].iter().all(Option::is_some))
            .collect();
        let excluded: Vec<String> = (0..panel.stations.len())
            .filter(|i| !keep.contains(i))
            .map(|i| panel.stations[i].clone())
            .collect();
        if keep.len() < 2 {
            return Err(Failure::usage(format!(
                "only {} stations have complete records; at least two are needed",
                keep.len()
            )));
        }
        let t = panel.years.len();
        let lon: Vec<f64> = keep.iter().map(|&i| panel.lon[i]).collect();
        let lat: Vec<f64> = keep.iter().map(|&i| panel.lat[i]).collect();
        let (coords, projection) = project_equirectangular(&lon, &lat);
        let values = DMatrix::from_fn(keep.len(), t, |i, j| panel.values[keep[i]][j].expect("complete case"));
        let labels: Vec<String> = keep.iter().map(|&i| panel.stations[i].clone()).collect();
        let (data, grand_mean) = if self.detrend {
            let anova = detrend_two_way_anova(&values)?;
            let mu = anova.mu;
            (anova.into_dataset(coords, Some(labels))?, Some(mu))
        } else {
            (SpatialDataset::new(coords, values.transpose(), Some(labels))?, None)
        };
        let dist = data.distance_summary()?;
        let report = IngestReport {
            n_stations: panel.stations.len(),
            n_included: keep.len(),
            n_excluded: excluded.len(),
            excluded,
            years: panel.years.clone(),
            min_distance_km: dist.min_positive,
            median_distance_km: dist.median,
            max_distance_km: dist.max,
            projection,
            grand_mean,
        };
        let mut art = Artifacts::new(RunManifest::new("ingest", &to_toml(self), 0));
        art.manifest_mut().add_input(input, text.as_bytes());
        art.manifest_mut().notes.push(format!(
            "coordinates projected to km: equirectangular about lon {:.6}, lat {:.6}",
            projection.lon0, projection.lat0
        ));
        art.table("data.csv", write_dataset(&data));
        art.json("ingest.json", &report)?;
        Ok(Outcome {
            artifacts: art,
            warning: None,
        })
    }
}
