//! Replicate-averaged empirical covariance and semivariogram, WLS fits, and ANOVA detrending.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{basis_all, SieveCovariance};
use crate::covariance::IsotropicCovariance;
use crate::error::{Error, Result};
use crate::gp_core::SpatialDataset;
use crate::optim::{golden_section, nelder_mead, NelderMeadOptions};
use crate::parametric::{Family, ParametricCovariance};
use crate::qp::nnls;

pub const DEFAULT_BINS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSummary {
    pub distances: Vec<f64>,
    pub cov_hat: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    pub pair_counts: Vec<usize>,
    pub binned: bool,
    /// Mean of `Y²` over all sites and replicates (mean-zero convention).
    pub sample_variance: f64,
}

impl EmpiricalSummary {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    pub fn h_max(&self) -> f64 {
        *self.distances.last().expect("summary is nonempty")
    }
}

/// Per-distance (or per-bin) averages over distinct pairs `i ≠ j` and replicates.
///
/// `bins = None` groups pairs by exact distance; `Some(b)` uses `b` equal-width
/// bins over `[h_min, h_max]` located at the mean distance of their pairs.
pub fn empirical_summary(data: &SpatialDataset, bins: Option<usize>) -> Result<EmpiricalSummary> {
    data.validate()?;
    let n = data.n_sites();
    if n < 2 {
        return Err(Error::validation("empirical summary needs at least two sites"));
    }
    if bins == Some(0) {
        return Err(Error::validation("bin count must be positive"));
    }
    let r = data.n_replicates();
    let mut pairs: Vec<(f64, usize, usize)> = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| (data.distance(i, j), i, j)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // group index for every pair
    let groups: Vec<usize> = match bins {
        None => {
            let mut g = Vec::with_capacity(pairs.len());
            let mut current = 0;
            for (k, p) in pairs.iter().enumerate() {
                if k > 0 && p.0 != pairs[k - 1].0 {
                    current += 1;
                }
                g.push(current);
            }
            g
        }
        Some(b) => {
            let lo = pairs[0].0;
            let hi = pairs[pairs.len() - 1].0;
            let width = (hi - lo) / b as f64;
            pairs
                .iter()
                .map(|p| if width > 0.0 { (((p.0 - lo) / width) as usize).min(b - 1) } else { 0 })
                .collect()
        }
    };
    let n_groups = groups.last().map_or(0, |g| g + 1);
    let mut dist_sum = vec![0.0; n_groups];
    let mut cov = vec![0.0; n_groups];
    let mut gam = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    let mut first = vec![0.0; n_groups];
    for (&(d, i, j), &g) in pairs.iter().zip(&groups) {
        if counts[g] == 0 {
            first[g] = d;
        }
        counts[g] += 1;
        dist_sum[g] += d;
        let mut c = 0.0;
        let mut v = 0.0;
        for k in 0..r {
            let (a, b) = (data.obs[(k, i)], data.obs[(k, j)]);
            c += a * b;
            v += 0.5 * (a - b) * (a - b);
        }
        cov[g] += c;
        gam[g] += v;
    }
    let mut out = EmpiricalSummary {
        distances: Vec::new(),
        cov_hat: Vec::new(),
        gamma_hat: Vec::new(),
        pair_counts: Vec::new(),
        binned: bins.is_some(),
        sample_variance: data.obs.iter().map(|y| y * y).sum::<f64>() / data.n_obs() as f64,
    };
    for g in 0..n_groups {
        if counts[g] == 0 {
            continue;
        }
        let denom = (counts[g] * r) as f64;
        out.distances.push(if bins.is_some() { dist_sum[g] / counts[g] as f64 } else { first[g] });
        out.cov_hat.push(cov[g] / denom);
        out.gamma_hat.push(gam[g] / denom);
        out.pair_counts.push(counts[g]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WlsTarget {
    Covariance,
    Semivariogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Uniform,
    PairCount,
    User(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WlsModel {
    Parametric(Family),
    Sieve { m: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WlsSpec {
    pub target: WlsTarget,
    pub weights: WeightScheme,
    pub model: WlsModel,
}

impl WlsSpec {
    pub fn new(target: WlsTarget, weights: WeightScheme, model: WlsModel) -> Self {
        WlsSpec { target, weights, model }
    }

    fn resolve_weights(&self, s: &EmpiricalSummary) -> Result<Vec<f64>> {
        let w = match &self.weights {
            WeightScheme::Uniform => vec![1.0; s.len()],
            WeightScheme::PairCount => s.pair_counts.iter().map(|&c| c as f64).collect(),
            WeightScheme::User(w) => {
                if w.len() != s.len() {
                    return Err(Error::validation(format!("{} user weights for {} distances", w.len(), s.len())));
                }
                w.clone()
            }
        };
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || w.iter().all(|&x| x == 0.0) {
            return Err(Error::validation("WLS weights must be nonnegative and not all zero"));
        }
        Ok(w)
    }
}

/// A fitted model, either parametric or sieve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "model")]
pub enum FittedModel {
    Parametric(ParametricCovariance),
    Sieve(SieveCovariance),
}

impl FittedModel {
    fn as_cov(&self) -> &dyn IsotropicCovariance {
        match self {
            FittedModel::Parametric(p) => p,
            FittedModel::Sieve(s) => s,
        }
    }
}

impl IsotropicCovariance for FittedModel {
    fn continuous_part(&self, h: f64) -> f64 {
        self.as_cov().continuous_part(h)
    }

    fn nugget(&self) -> f64 {
        self.as_cov().nugget()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WlsFit {
    pub target: WlsTarget,
    /// For a semivariogram target this is the fitted `γ_θ(h) = σ²(1 − R_θ(h))` written as a covariance.
    pub model: FittedModel,
    /// Estimated covariance at the origin: `σ̂²` for covariance fits, `γ_θ(h_max)` for semivariogram fits.
    pub c0_hat: f64,
    pub objective: f64,
    pub converged: bool,
}

impl WlsFit {
    /// `Ĉ(h)`: the fitted covariance, or `Ĉ(0) − γ_θ(h)` for semivariogram fits.
    pub fn estimate(&self) -> WlsEstimate<'_> {
        WlsEstimate { fit: self }
    }
}

/// The covariance implied by a WLS fit, as an [`IsotropicCovariance`].
#[derive(Debug, Clone, Copy)]
pub struct WlsEstimate<'a> {
    fit: &'a WlsFit,
}

impl IsotropicCovariance for WlsEstimate<'_> {
    fn continuous_part(&self, h: f64) -> f64 {
        match self.fit.target {
            WlsTarget::Covariance => self.fit.model.continuous_part(h),
            WlsTarget::Semivariogram => {
                let sill = self.fit.model.partial_sill();
                self.fit.c0_hat - (sill - self.fit.model.continuous_part(h))
            }
        }
    }

    fn nugget(&self) -> f64 {
        match self.fit.target {
            WlsTarget::Covariance => self.fit.model.nugget(),
            WlsTarget::Semivariogram => 0.0,
        }
    }
}

/// Minimizes `Σ wᵢ (ê(hᵢ) − model(hᵢ))²` over the family in `spec`.
pub fn wls_fit(summary: &EmpiricalSummary, spec: &WlsSpec) -> Result<WlsFit> {
    if summary.is_empty() {
        return Err(Error::validation("empirical summary is empty"));
    }
    let lens = [summary.cov_hat.len(), summary.gamma_hat.len(), summary.pair_counts.len()];
    if lens.iter().any(|&l| l != summary.len()) {
        return Err(Error::validation("summary vectors have different lengths"));
    }
    let w = spec.resolve_weights(summary)?;
    let y = match spec.target {
        WlsTarget::Covariance => &summary.cov_hat,
        WlsTarget::Semivariogram => &summary.gamma_hat,
    };
    match spec.model {
        WlsModel::Parametric(family) => fit_parametric(summary, family, spec.target, y, &w),
        WlsModel::Sieve { m } => fit_sieve(summary, m, spec.target, y, &w),
    }
}

/// Shape `R(h)` or `1 − R(h)` evaluated at the summary distances.
fn design(target: WlsTarget, shape: impl Fn(f64) -> f64, h: &[f64]) -> Vec<f64> {
    h.iter()
        .map(|&d| match target {
            WlsTarget::Covariance => shape(d),
            WlsTarget::Semivariogram => 1.0 - shape(d),
        })
        .collect()
}

/// Best `σ² ≥ 0` and residual sum for `y ≈ σ² x` under weights `w`.
fn profile_scale(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * x * y).sum();
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * x * x).sum();
    let s = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let obj = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (y - s * x).powi(2)).sum();
    (s, obj)
}

/// Unit-sill parameters from the unconstrained optimizer coordinates.
pub(crate) fn decode(family: Family, z: &[f64]) -> Option<Vec<f64>> {
    let e = |v: f64| v.exp();
    let p = match family {
        Family::Matern => vec![1.0, e(z[0]), e(z[1])],
        Family::Cauchy | Family::Gaussian => vec![1.0, e(z[0])],
        // κ₂ ∈ (0, 2] through a logistic map
        Family::GenCauchy => vec![1.0, e(z[0]), e(z[1]), 2.0 / (1.0 + (-z[2]).exp())],
        Family::LinearMatern => vec![1.0, e(z[0]), e(z[1]), e(z[2]), e(z[3])],
    };
    let smoothness_ok = match family {
        Family::Matern => (0.05..=30.0).contains(&p[2]),
        Family::LinearMatern => (0.05..=30.0).contains(&p[3]) && (0.05..=30.0).contains(&p[4]),
        Family::GenCauchy => p[2] <= 1e3 && p[3] > 1e-3,
        _ => true,
    };
    let ranges_ok = p[1..].iter().all(|v| v.is_finite() && *v > 1e-8 && *v < 1e8);
    (smoothness_ok && ranges_ok).then_some(p)
}

pub(crate) fn starting_points(family: Family, h_lo: f64, h_hi: f64) -> Vec<Vec<f64>> {
    let ranges: Vec<f64> = (0..5).map(|i| h_lo.ln() + (h_hi.ln() - h_lo.ln()) * (i as f64 + 0.5) / 5.0).collect();
    let mut out = Vec::new();
    for &lr in &ranges {
        match family {
            Family::Matern => {
                for nu in [0.5f64, 1.5] {
                    out.push(vec![lr, nu.ln()]);
                }
            }
            Family::Cauchy | Family::Gaussian => out.push(vec![lr]),
            Family::GenCauchy => out.push(vec![lr, 0.0, 0.0]),
            Family::LinearMatern => out.push(vec![lr, lr + 0.5, 0.0, 0.7]),
        }
    }
    out
}

fn fit_parametric(summary: &EmpiricalSummary, family: Family, target: WlsTarget, y: &[f64], w: &[f64]) -> Result<WlsFit> {
    let h = &summary.distances;
    let objective = |z: &[f64]| -> f64 {
        let Some(p) = decode(family, z) else {
            return f64::INFINITY;
        };
        let Ok(model) = ParametricCovariance::new(family, p, 0.0) else {
            return f64::INFINITY;
        };
        let x = design(target, |d| model.continuous_part(d), h);
        profile_scale(&x, y, w).1
    };
    let h_lo = h[0].max(1e-6 * summary.h_max());
    let h_hi = summary.h_max();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for z0 in starting_points(family, h_lo, h_hi) {
        let v = objective(&z0);
        if best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((z0, v));
        }
    }
    let (z0, _) = best.expect("at least one start");
    let opts = NelderMeadOptions {
        max_evals: 6000,
        ..Default::default()
    };
    let min = nelder_mead(objective, &z0, &opts);
    let mut params = decode(family, &min.x).ok_or_else(|| Error::Convergence {
        context: "WLS optimizer left the feasible region".into(),
        iterations: min.evals,
        best: min.x.clone(),
    })?;
    let shape = ParametricCovariance::new(family, params.clone(), 0.0)?;
    let x = design(target, |d| shape.continuous_part(d), h);
    let (s, obj) = profile_scale(&x, y, w);
    params[0] = s.max(f64::MIN_POSITIVE);
    let model = ParametricCovariance::new(family, params, 0.0)?;
    let c0_hat = match target {
        WlsTarget::Covariance => model.eval(0.0),
        WlsTarget::Semivariogram => model.semivariogram(summary.h_max()),
    };
    Ok(WlsFit {
        target,
        model: FittedModel::Parametric(model),
        c0_hat,
        objective: obj,
        converged: min.converged,
    })
}

/// Nonnegative coefficients `c_k = σ² w_k` at a fixed range, by NNLS.
fn sieve_coefficients(h: &[f64], y: &[f64], w: &[f64], m: usize, rho: f64, target: WlsTarget) -> Result<(DVector<f64>, f64)> {
    let mut a = DMatrix::zeros(h.len(), m);
    let mut row = vec![0.0; m];
    for (i, &d) in h.iter().enumerate() {
        basis_all(m, d / rho, &mut row);
        let sw = w[i].sqrt();
        for k in 0..m {
            a[(i, k)] = sw * match target {
                WlsTarget::Covariance => row[k],
                WlsTarget::Semivariogram => 1.0 - row[k],
            };
        }
    }
    let b = DVector::from_iterator(h.len(), y.iter().zip(w).map(|(y, w)| w.sqrt() * y));
    let c = nnls(&a, &b)?;
    let obj = (&a * &c - &b).norm_squared();
    Ok((c, obj))
}

fn fit_sieve(summary: &EmpiricalSummary, m: usize, target: WlsTarget, y: &[f64], w: &[f64]) -> Result<WlsFit> {
    if m == 0 {
        return Err(Error::domain("sieve order must be at least 1"));
    }
    let h = &summary.distances;
    let lo = (h[0].max(1e-6 * summary.h_max()) / 4.0).ln();
    let hi = (4.0 * summary.h_max()).ln();
    let obj = |lr: f64| sieve_coefficients(h, y, w, m, lr.exp(), target).map_or(f64::INFINITY, |r| r.1);

    // coarse grid, then golden section around the best cell
    let grid = 40;
    let pts: Vec<f64> = (0..=grid).map(|i| lo + (hi - lo) * i as f64 / grid as f64).collect();
    let vals: Vec<f64> = pts.iter().map(|&p| obj(p)).collect();
    let ib = (0..=grid).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let (a, b) = (pts[ib.saturating_sub(1)], pts[(ib + 1).min(grid)]);
    let (lr, _) = golden_section(obj, a, b, 1e-10);
    let lr = if obj(lr) <= vals[ib] { lr } else { pts[ib] };
    let rho = lr.exp();
    let (c, objective) = sieve_coefficients(h, y, w, m, rho, target)?;
    let total = c.sum();
    let (weights, sigma2) = if total > 0.0 {
        (c.iter().map(|v| v / total).collect::<Vec<_>>(), total)
    } else {
        // no covariance signal at all: keep a valid model with negligible variance
        (vec![1.0 / m as f64; m], f64::MIN_POSITIVE)
    };
    let model = SieveCovariance::new(weights, rho, sigma2, 0.0)?;
    let c0_hat = match target {
        WlsTarget::Covariance => if total > 0.0 { model.eval(0.0) } else { 0.0 },
        WlsTarget::Semivariogram => model.semivariogram(summary.h_max()),
    };
    Ok(WlsFit {
        target,
        model: FittedModel::Sieve(model),
        c0_hat,
        objective,
        converged: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuggetFit {
    pub fit: WlsFit,
    /// `max(0, s² − Ĉ_θ(0))`.
    pub nugget: f64,
    /// `s² − Ĉ_θ(0)` before flooring; negative values are diagnostics.
    pub raw_nugget: f64,
}

/// Covariance fit on distinct pairs only, with the nugget read off the sample variance.
pub fn nugget_adapted_cov_fit(data: &SpatialDataset, spec: &WlsSpec) -> Result<NuggetFit> {
    let summary = empirical_summary(data, None)?;
    let spec = WlsSpec {
        target: WlsTarget::Covariance,
        ..spec.clone()
    };
    let fit = wls_fit(&summary, &spec)?;
    Ok(nugget_from_fit(fit, summary.sample_variance))
}

/// Applies the floor rule `τ̂² = max(0, s² − Ĉ_θ(0))`.
pub fn nugget_from_fit(fit: WlsFit, sample_variance: f64) -> NuggetFit {
    let raw = sample_variance - fit.c0_hat;
    NuggetFit {
        fit,
        nugget: raw.max(0.0),
        raw_nugget: raw,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaFit {
    pub mu: f64,
    /// Station effects, summing to zero.
    pub alpha: Vec<f64>,
    /// Year effects, summing to zero.
    pub beta: Vec<f64>,
    /// `stations × years` residuals.
    pub residuals: DMatrix<f64>,
}

impl AnovaFit {
    /// Residuals as replicates: one row per year, one column per station.
    pub fn into_dataset(self, coords: DMatrix<f64>, labels: Option<Vec<String>>) -> Result<SpatialDataset> {
        SpatialDataset::new(coords, self.residuals.transpose(), labels)
    }
}

/// Least-squares fit of `Y_ij = μ + α_i + β_j + ε_ij` on a complete panel.
pub fn detrend_two_way_anova(panel: &DMatrix<f64>) -> Result<AnovaFit> {
    let (s, t) = panel.shape();
    if s < 2 || t < 2 {
        return Err(Error::validation(format!(
            "two-way ANOVA needs at least two stations and two years, got {s}x{t}"
        )));
    }
    if panel.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("panel has missing or non-finite entries"));
    }
    let mu = panel.mean();
    let alpha: Vec<f64> = (0..s).map(|i| panel.row(i).mean() - mu).collect();
    let beta: Vec<f64> = (0..t).map(|j| panel.column(j).mean() - mu).collect();
    let residuals = DMatrix::from_fn(s, t, |i, j| panel[(i, j)] - mu - alpha[i] - beta[j]);
    Ok(AnovaFit {
        mu,
        alpha,
        beta,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_core::simulate_gp;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn two_sites(a: f64, b: f64) -> SpatialDataset {
        let coords = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, 4.0]);
        SpatialDataset::new(coords, DMatrix::from_row_slice(1, 2, &[a, b]), None).unwrap()
    }

    fn exact_summary(model: &ParametricCovariance, h: &[f64]) -> EmpiricalSummary {
        EmpiricalSummary {
            distances: h.to_vec(),
            cov_hat: h.iter().map(|&d| model.eval(d)).collect(),
            gamma_hat: h.iter().map(|&d| model.semivariogram(d)).collect(),
            pair_counts: (0..h.len()).map(|i| 1 + (i * 7) % 5).collect(),
            binned: false,
            sample_variance: model.eval(0.0),
        }
    }

    #[test]
    fn two_site_examples() {
        let s = empirical_summary(&two_sites(0.0, 2.0), None).unwrap();
        assert_eq!(s.distances, vec![5.0]);
        assert_eq!(s.gamma_hat, vec![2.0]);
        assert_eq!(s.cov_hat, vec![0.0]);
        assert_eq!(s.pair_counts, vec![1]);
    }

    #[test]
    fn replicate_averaging_is_linear() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let coords = DMatrix::from_fn(6, 2, |_, _| rng.random_range(0.0..4.0));
        let obs = DMatrix::from_fn(4, 6, |_, _| rng.random_range(-1.0..1.0));
        let all = empirical_summary(&SpatialDataset::new(coords.clone(), obs.clone(), None).unwrap(), None).unwrap();
        let parts: Vec<EmpiricalSummary> = (0..4)
            .map(|k| empirical_summary(&SpatialDataset::new(coords.clone(), obs.rows(k, 1).into_owned(), None).unwrap(), None).unwrap())
            .collect();
        for i in 0..all.len() {
            let c = parts.iter().map(|p| p.cov_hat[i]).sum::<f64>() / 4.0;
            let g = parts.iter().map(|p| p.gamma_hat[i]).sum::<f64>() / 4.0;
            assert_relative_eq!(all.cov_hat[i], c, max_relative = 1e-13);
            assert_relative_eq!(all.gamma_hat[i], g, max_relative = 1e-13);
        }
    }

    #[test]
    fn binned_matches_unbinned_with_singleton_bins() {
        // distances 1, 2, 3 between collinear sites; 2 bins would merge, 4 bins keep them apart
        let coords = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        let obs = DMatrix::from_row_slice(2, 3, &[0.3, -1.0, 2.0, 1.0, 0.5, -0.4]);
        let data = SpatialDataset::new(coords, obs, None).unwrap();
        let a = empirical_summary(&data, None).unwrap();
        let b = empirical_summary(&data, Some(4)).unwrap();
        assert_eq!(a.distances, b.distances);
        assert_eq!(a.cov_hat, b.cov_hat);
        assert_eq!(a.gamma_hat, b.gamma_hat);
        assert!(b.binned);
        let c = empirical_summary(&data, Some(1)).unwrap();
        assert_eq!(c.pair_counts, vec![3]);
        assert_relative_eq!(c.distances[0], 2.0);
    }

    #[test]
    fn empirical_covariance_tracks_truth() {
        let truth = ParametricCovariance::matern(1.0, 1.25, 1.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let coords = DMatrix::from_fn(6, 2, |_, _| rng.random_range(0.0..4.0));
        let data = simulate_gp(&truth, &coords, 5000, 6).unwrap();
        let s = empirical_summary(&data, None).unwrap();
        let mut inside = 0;
        for i in 0..s.len() {
            let c = truth.eval(s.distances[i]);
            let se = ((1.0 + c * c) / (5000 * s.pair_counts[i]) as f64).sqrt();
            if (s.cov_hat[i] - c).abs() <= 3.0 * se {
                inside += 1;
            }
            // sample-variance reconstruction of the covariance
            assert!((s.sample_variance - s.gamma_hat[i] - c).abs() < 0.1);
        }
        assert!(inside as f64 >= 0.9 * s.len() as f64);
    }

    #[test]
    fn wls_recovers_noiseless_cauchy() {
        let truth = ParametricCovariance::cauchy(1.0, 0.8).unwrap();
        let h: Vec<f64> = (1..=40).map(|i| i as f64 * 0.35).collect();
        let s = exact_summary(&truth, &h);
        let spec = WlsSpec::new(WlsTarget::Covariance, WeightScheme::PairCount, WlsModel::Parametric(Family::Cauchy));
        let fit = wls_fit(&s, &spec).unwrap();
        let FittedModel::Parametric(p) = &fit.model else { panic!() };
        assert!((p.params[0] - 1.0).abs() < 1e-3 && (p.params[1] - 0.8).abs() < 1e-3, "{p:?}");
        assert!(fit.objective < 1e-12);
    }

    #[test]
    fn wls_argmin_ignores_weight_scale() {
        let truth = ParametricCovariance::matern(1.0, 1.25, 1.0).unwrap();
        let h: Vec<f64> = (1..=30).map(|i| i as f64 * 0.4).collect();
        let mut s = exact_summary(&truth, &h);
        for (i, c) in s.cov_hat.iter_mut().enumerate() {
            *c += 0.01 * ((i as f64) * 1.7).sin();
        }
        let fit = |w: f64| {
            let spec = WlsSpec::new(WlsTarget::Covariance, WeightScheme::User(vec![w; h.len()]), WlsModel::Parametric(Family::Gaussian));
            wls_fit(&s, &spec).unwrap()
        };
        let (a, b) = (fit(1.0), fit(37.0));
        let (FittedModel::Parametric(pa), FittedModel::Parametric(pb)) = (&a.model, &b.model) else { panic!() };
        for (x, y) in pa.params.iter().zip(&pb.params) {
            assert_relative_eq!(*x, *y, max_relative = 1e-6);
        }
    }

    #[test]
    fn semivariogram_fit_reads_c0_at_h_max() {
        let truth = ParametricCovariance::gaussian(1.0, 3.0).unwrap();
        let h: Vec<f64> = (1..=30).map(|i| i as f64 * 0.5).collect();
        let s = exact_summary(&truth, &h);
        for model in [WlsModel::Parametric(Family::Gaussian), WlsModel::Sieve { m: 4 }] {
            let spec = WlsSpec::new(WlsTarget::Semivariogram, WeightScheme::Uniform, model);
            let fit = wls_fit(&s, &spec).unwrap();
            assert_relative_eq!(fit.c0_hat, fit.model.semivariogram(s.h_max()), max_relative = 1e-14);
            let est = fit.estimate();
            assert_relative_eq!(est.eval(0.0), fit.c0_hat, max_relative = 1e-14);
            assert!((fit.c0_hat - 1.0).abs() < 0.02, "{model:?}: {}", fit.c0_hat);
        }
    }

    #[test]
    fn sieve_wls_fits_exact_sieve_data() {
        let truth = SieveCovariance::new(vec![0.2, 0.0, 0.8], 1.5, 2.0, 0.0).unwrap();
        let h: Vec<f64> = (1..=40).map(|i| i as f64 * 0.3).collect();
        let s = EmpiricalSummary {
            distances: h.clone(),
            cov_hat: h.iter().map(|&d| truth.eval(d)).collect(),
            gamma_hat: h.iter().map(|&d| truth.semivariogram(d)).collect(),
            pair_counts: vec![1; h.len()],
            binned: false,
            sample_variance: 2.0,
        };
        let spec = WlsSpec::new(WlsTarget::Covariance, WeightScheme::Uniform, WlsModel::Sieve { m: 3 });
        let fit = wls_fit(&s, &spec).unwrap();
        assert!(fit.objective < 1e-12);
        assert!((fit.c0_hat - 2.0).abs() < 1e-4);
    }

    #[test]
    fn nugget_adaptation() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let coords = DMatrix::from_fn(30, 2, |_, _| rng.random_range(0.0..20.0));
        let obs = DMatrix::from_fn(50, 30, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let data = SpatialDataset::new(coords, obs, None).unwrap();
        let spec = WlsSpec::new(WlsTarget::Covariance, WeightScheme::PairCount, WlsModel::Sieve { m: 3 });
        let nf = nugget_adapted_cov_fit(&data, &spec).unwrap();
        let s2 = empirical_summary(&data, None).unwrap().sample_variance;
        assert!(nf.fit.c0_hat < 0.15 * s2, "{}", nf.fit.c0_hat);
        assert!((nf.nugget - s2).abs() <= 0.15 * s2);

        let over = WlsFit { c0_hat: 5.0, ..nf.fit.clone() };
        let floored = nugget_from_fit(over, 1.0);
        assert_eq!(floored.nugget, 0.0);
        assert_eq!(floored.raw_nugget, -4.0);
    }

    #[test]
    fn anova_examples() {
        let additive = DMatrix::from_fn(4, 5, |i, j| 3.0 + i as f64 * 0.7 - (j as f64).powi(2) * 0.2);
        let fit = detrend_two_way_anova(&additive).unwrap();
        assert!(fit.residuals.amax() <= 1e-10);
        let small = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!(detrend_two_way_anova(&small).unwrap().residuals.amax() <= 1e-12);
        assert!(detrend_two_way_anova(&DMatrix::zeros(1, 5)).is_err());

        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let panel = DMatrix::from_fn(6, 9, |_, _| rng.random_range(-5.0..5.0));
        let fit = detrend_two_way_anova(&panel).unwrap();
        for i in 0..6 {
            assert!(fit.residuals.row(i).mean().abs() <= 1e-10);
        }
        for j in 0..9 {
            assert!(fit.residuals.column(j).mean().abs() <= 1e-10);
        }
        assert!(fit.alpha.iter().sum::<f64>().abs() < 1e-10);
        let ds = fit.into_dataset(DMatrix::zeros(6, 2), None).unwrap();
        assert_eq!((ds.n_replicates(), ds.n_sites()), (9, 6));
    }
}
