//! Covariance matrices, Gaussian likelihood with replicates, and field simulation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{basis_all, check_simplex};
use crate::covariance::IsotropicCovariance;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Sites in `ℝ^d` with `r` replicate observations at each site.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    /// `n × d` site coordinates.
    pub coords: DMatrix<f64>,
    /// `r × n` observations, one row per independent realization.
    pub obs: DMatrix<f64>,
    pub labels: Option<Vec<String>>,
}

impl SpatialDataset {
    pub fn new(coords: DMatrix<f64>, obs: DMatrix<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        let ds = SpatialDataset { coords, obs, labels };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.coords.nrows();
        if n < 1 || self.coords.ncols() < 1 {
            return Err(Error::validation("dataset needs at least one site and one coordinate"));
        }
        if self.obs.ncols() != n {
            return Err(Error::validation(format!(
                "observations have {} columns but there are {n} sites",
                self.obs.ncols()
            )));
        }
        if self.obs.nrows() < 1 {
            return Err(Error::validation("dataset needs at least one replicate"));
        }
        if self.coords.iter().chain(self.obs.iter()).any(|x| !x.is_finite()) {
            return Err(Error::validation("coordinates and observations must be finite"));
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::validation(format!("{} labels for {n} sites", l.len())));
            }
        }
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.coords.nrows()
    }

    pub fn n_replicates(&self) -> usize {
        self.obs.nrows()
    }

    /// Total number of observations `r·n`.
    pub fn n_obs(&self) -> usize {
        self.n_sites() * self.n_replicates()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        site_distance(&self.coords, i, j)
    }

    pub fn has_duplicate_sites(&self) -> bool {
        let n = self.n_sites();
        (0..n).any(|i| (0..i).any(|j| self.distance(i, j) == 0.0))
    }

    /// Minimum positive, median and maximum pairwise distance over `i < j`.
    pub fn distance_summary(&self) -> Result<DistanceSummary> {
        let n = self.n_sites();
        let mut d: Vec<f64> = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| self.distance(i, j)).collect();
        if d.is_empty() {
            return Err(Error::validation("need at least two sites for pairwise distances"));
        }
        d.sort_by(f64::total_cmp);
        let min_positive = d.iter().copied().find(|&x| x > 0.0).ok_or_else(|| Error::validation("all sites coincide"))?;
        let mid = d.len() / 2;
        let median = if d.len() % 2 == 1 { d[mid] } else { 0.5 * (d[mid - 1] + d[mid]) };
        Ok(DistanceSummary {
            min_positive,
            median,
            max: *d.last().unwrap(),
        })
    }

    /// The same data with sites reordered by `perm` (new site `i` is old site `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let coords = self.coords.select_rows(perm);
        let obs = self.obs.select_columns(perm);
        let labels = self.labels.as_ref().map(|l| perm.iter().map(|&i| l[i].clone()).collect());
        SpatialDataset { coords, obs, labels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub min_positive: f64,
    pub median: f64,
    pub max: f64,
}

fn site_distance(coords: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..coords.ncols())
        .map(|c| (coords[(i, c)] - coords[(j, c)]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// A factorized covariance matrix.
#[derive(Debug, Clone)]
pub struct CovMatrixHandle {
    pub matrix: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub logdet: f64,
    /// Diagonal jitter that was needed for the factorization (0 when none).
    pub jitter: f64,
}

impl CovMatrixHandle {
    /// Factorizes `matrix`, escalating diagonal jitter from `1e-10` to `1e-6` times the mean diagonal.
    pub fn factorize(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::domain("covariance matrix must be square and nonempty"));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::Conditioning {
                context: "covariance matrix has non-finite entries".into(),
                smallest_pivot: f64::NAN,
            });
        }
        let mean_diag = matrix.trace() / n as f64;
        let mut jitter = 0.0;
        loop {
            let mut a = matrix.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    a[(i, i)] += jitter;
                }
            }
            if let Some(chol) = a.cholesky() {
                let l = chol.l_dirty();
                let logdet = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
                if logdet.is_finite() {
                    return Ok(CovMatrixHandle {
                        matrix,
                        chol,
                        logdet,
                        jitter,
                    });
                }
            }
            jitter = if jitter == 0.0 { 1e-10 * mean_diag } else { jitter * 10.0 };
            if !(jitter <= 1e-6 * mean_diag * (1.0 + 1e-9)) {
                break;
            }
        }
        let smallest = matrix.clone().symmetric_eigenvalues().min();
        Err(Error::Conditioning {
            context: format!("Cholesky of {n}x{n} covariance failed after jitter escalation"),
            smallest_pivot: smallest,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `L` with `Σ = L Lᵀ` (jitter included).
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `Σ_j Y_jᵀ Σ⁻¹ Y_j` over the rows of `obs`, by triangular solves.
    pub fn quadratic_form_sum(&self, obs: &DMatrix<f64>) -> f64 {
        // L⁻¹ Yᵀ column by column: ‖L⁻¹ y‖²
        let z = self.chol.l_dirty().solve_lower_triangular(&obs.transpose()).expect("positive diagonal");
        z.norm_squared()
    }

    /// `Σ⁻¹ B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// `Σ_ij = C(‖s_i − s_j‖)` with the nugget on the diagonal only.
pub fn cov_matrix<C: IsotropicCovariance + ?Sized>(model: &C, coords: &DMatrix<f64>) -> DMatrix<f64> {
    let n = coords.nrows();
    let mut s = DMatrix::zeros(n, n);
    let diag = model.continuous_part(0.0) + model.nugget();
    for i in 0..n {
        s[(i, i)] = diag;
        for j in 0..i {
            let v = model.continuous_part(site_distance(coords, i, j));
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

pub fn build_cov_matrix<C: IsotropicCovariance + ?Sized>(model: &C, coords: &DMatrix<f64>) -> Result<CovMatrixHandle> {
    if coords.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("coordinates must be finite"));
    }
    CovMatrixHandle::factorize(cov_matrix(model, coords))
}

/// Gaussian log-likelihood of mean-zero data from a factorized covariance.
pub fn log_likelihood_with(handle: &CovMatrixHandle, obs: &DMatrix<f64>) -> f64 {
    let r = obs.nrows() as f64;
    let n = handle.dim() as f64;
    -0.5 * r * handle.logdet - 0.5 * handle.quadratic_form_sum(obs) - 0.5 * r * n * LN_2PI
}

/// `Σ_j [−½ logdet Σ − ½ Y_jᵀ Σ⁻¹ Y_j] − (rn/2) log 2π`.
pub fn log_likelihood<C: IsotropicCovariance + ?Sized>(model: &C, data: &SpatialDataset) -> Result<f64> {
    let handle = build_cov_matrix(model, &data.coords)?;
    Ok(log_likelihood_with(&handle, &data.obs))
}

/// Pairwise structure of a dataset for repeated sieve-likelihood evaluations.
#[derive(Debug, Clone)]
pub struct ProfileLikelihood<'a> {
    data: &'a SpatialDataset,
    pairs: Vec<(usize, usize, f64)>,
}

/// Profile log-likelihood at a point, with `σ²` maximized out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub loglik: f64,
    pub sigma2: f64,
}

impl ProfilePoint {
    /// `l / (rn)`.
    pub fn per_obs(&self, n_obs: usize) -> f64 {
        self.loglik / n_obs as f64
    }
}

/// Gradient of the profile log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileGradient {
    pub weights: Vec<f64>,
    /// Derivative with respect to the nugget ratio `η`.
    pub eta: f64,
}

impl<'a> ProfileLikelihood<'a> {
    pub fn new(data: &'a SpatialDataset) -> Self {
        let n = data.n_sites();
        let pairs = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, data.distance(i, j)))
            .collect();
        ProfileLikelihood { data, pairs }
    }

    pub fn data(&self) -> &SpatialDataset {
        self.data
    }

    /// Unit-variance shape matrix `Σ_{w,ρ} + η I`.
    pub fn shape_matrix(&self, weights: &[f64], rho: f64, eta: f64) -> DMatrix<f64> {
        let n = self.data.n_sites();
        let m = weights.len();
        let total: f64 = weights.iter().sum();
        let mut s = DMatrix::from_diagonal_element(n, n, total + eta);
        let mut a = vec![0.0; m];
        for &(i, j, d) in &self.pairs {
            basis_all(m, d / rho, &mut a);
            let v: f64 = a.iter().zip(weights).map(|(a, w)| a * w).sum();
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
        s
    }

    fn check(&self, weights: &[f64], rho: f64, eta: f64) -> Result<()> {
        check_simplex(weights)?;
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::domain(format!("range must be positive, got {rho}")));
        }
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::domain(format!("nugget ratio must be nonnegative, got {eta}")));
        }
        Ok(())
    }

    fn profile_from(&self, handle: &CovMatrixHandle) -> Result<(ProfilePoint, f64)> {
        let r = self.data.n_replicates() as f64;
        let n = self.data.n_sites() as f64;
        let q = handle.quadratic_form_sum(&self.data.obs);
        if !(q > 0.0) {
            return Err(Error::validation("observations are identically zero; profile variance degenerates"));
        }
        let sigma2 = q / (r * n);
        let loglik = -0.5 * r * handle.logdet - 0.5 * r * n * sigma2.ln() - 0.5 * r * n - 0.5 * r * n * LN_2PI;
        Ok((ProfilePoint { loglik, sigma2 }, q))
    }

    pub fn evaluate(&self, weights: &[f64], rho: f64, eta: f64) -> Result<ProfilePoint> {
        self.check(weights, rho, eta)?;
        let handle = CovMatrixHandle::factorize(self.shape_matrix(weights, rho, eta))?;
        Ok(self.profile_from(&handle)?.0)
    }

    /// Value and gradient in `(w, η)` at fixed `ρ`.
    ///
    /// With `S` the shape matrix, `α_j = S⁻¹Y_j`, `q = Σ Y_jᵀα_j` and
    /// `G = (rn/q) Σ α_j α_jᵀ − r S⁻¹`, the partial derivative along `∂S` is `½ tr(G ∂S)`.
    pub fn evaluate_with_gradient(&self, weights: &[f64], rho: f64, eta: f64) -> Result<(ProfilePoint, ProfileGradient)> {
        self.check(weights, rho, eta)?;
        let handle = CovMatrixHandle::factorize(self.shape_matrix(weights, rho, eta))?;
        let (point, q) = self.profile_from(&handle)?;
        let r = self.data.n_replicates() as f64;
        let n = self.data.n_sites();
        let alpha = handle.solve(&self.data.obs.transpose());
        let mut g = handle.inverse() * (-r);
        g += (&alpha * alpha.transpose()) * (r * n as f64 / q);

        let m = weights.len();
        let trace_g = g.trace();
        let mut grad = vec![trace_g; m];
        let mut a = vec![0.0; m];
        for &(i, j, d) in &self.pairs {
            basis_all(m, d / rho, &mut a);
            let gij = 2.0 * g[(i, j)];
            for k in 0..m {
                grad[k] += gij * a[k];
            }
        }
        for v in &mut grad {
            *v *= 0.5;
        }
        Ok((
            point,
            ProfileGradient {
                weights: grad,
                eta: 0.5 * trace_g,
            },
        ))
    }
}

/// `σ̂² = Σ_j Y_jᵀ S⁻¹ Y_j / (rn)` for the unit-variance shape `S = Σ_{w,ρ} + η I`.
pub fn profile_sigma2(weights: &[f64], rho: f64, nugget_ratio: f64, data: &SpatialDataset) -> Result<f64> {
    Ok(ProfileLikelihood::new(data).evaluate(weights, rho, nugget_ratio)?.sigma2)
}

/// `r` independent mean-zero draws `Y_j = L Z_j` at `coords`.
///
/// Replicate `j` uses ChaCha20 seeded with `seed` on stream `j`, so output is
/// identical regardless of thread count.
pub fn simulate_gp<C: IsotropicCovariance + ?Sized>(
    model: &C,
    coords: &DMatrix<f64>,
    r: usize,
    seed: u64,
) -> Result<SpatialDataset> {
    if r == 0 {
        return Err(Error::validation("replicate count must be positive"));
    }
    let handle = build_cov_matrix(model, coords)?;
    let l = handle.lower();
    let n = coords.nrows();
    let rows: Vec<DVector<f64>> = (0..r)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            &l * z
        })
        .collect();
    let obs = DMatrix::from_fn(r, n, |j, i| rows[j][i]);
    SpatialDataset::new(coords.clone(), obs, None)
}
