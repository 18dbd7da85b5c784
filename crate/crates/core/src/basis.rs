//! The sieve basis `A_{k,m}(h) = ∏_{j=k}^{m} (1 + h²/j)⁻¹` and the covariance
//! models built from it.
//!
//! Weights follow the correlation-simplex convention: a model of order `m` is
//! `C_m(h) = σ² Σ_k w_k A_{k,m}(h/ρ)` with `w` on the probability simplex, so
//! `C_m(0) = σ²` (plus the nugget). The Bernstein-polynomial view of the same
//! model has coefficients `m·w_k`; [`lift_coefficients`] works in that
//! convention and [`lift_weights`] wraps it for simplex weights.

use serde::{Deserialize, Serialize};

use crate::covariance::IsotropicCovariance;
use crate::error::{Error, Result};
use crate::special;

/// Tolerance on `Σ w_k = 1`.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Products with more factors than this are accumulated in log space.
const LOG_PRODUCT_THRESHOLD: usize = 64;

fn check_index(k: usize, m: usize, h: f64) -> Result<()> {
    if m < 1 {
        return Err(Error::domain("basis order m must be at least 1"));
    }
    if k < 1 || k > m {
        return Err(Error::domain(format!("basis index k={k} outside [1, {m}]")));
    }
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::domain(format!("lag must be finite and nonnegative, got {h}")));
    }
    Ok(())
}

/// `A_{k,m}(h)` evaluated as a finite product.
pub fn basis_eval(k: usize, m: usize, h: f64) -> Result<f64> {
    check_index(k, m, h)?;
    Ok(basis_product(k, m, h * h))
}

/// `ln A_{k,m}(h)` by the product route.
pub fn ln_basis_eval(k: usize, m: usize, h: f64) -> Result<f64> {
    check_index(k, m, h)?;
    let t = h * h;
    Ok(-(k..=m).map(|j| (t / j as f64).ln_1p()).sum::<f64>())
}

fn basis_product(k: usize, m: usize, t: f64) -> f64 {
    if m - k + 1 > LOG_PRODUCT_THRESHOLD {
        let s: f64 = (k..=m).map(|j| (t / j as f64).ln_1p()).sum();
        (-s).exp()
    } else {
        (k..=m).fold(1.0, |acc, j| acc / (1.0 + t / j as f64))
    }
}

/// `A_{k,m}(h)` as the Beta-function ratio `B(k+h², m-k+1) / B(k, m-k+1)`.
pub fn basis_eval_beta(k: usize, m: usize, h: f64) -> Result<f64> {
    Ok(ln_basis_eval_beta(k, m, h)?.exp())
}

/// `ln A_{k,m}(h)` by the Beta-ratio route.
pub fn ln_basis_eval_beta(k: usize, m: usize, h: f64) -> Result<f64> {
    check_index(k, m, h)?;
    Ok(special::ln_beta_ratio(k as f64, h * h, (m - k + 1) as f64))
}

/// Writes `A_{1,m}(h), …, A_{m,m}(h)` into `out` (length `m`).
///
/// Uses the backward recursion `A_{k,m} = A_{k+1,m} / (1 + h²/k)`.
pub fn basis_all(m: usize, h: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m);
    let t = h * h;
    let mut acc = 1.0;
    for k in (1..=m).rev() {
        acc /= 1.0 + t / k as f64;
        out[k - 1] = acc;
    }
}

/// A covariance model in the sieve space of order `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveCovariance {
    pub m: usize,
    pub weights: Vec<f64>,
    pub rho: f64,
    pub sigma2: f64,
    pub nugget: f64,
}

impl SieveCovariance {
    pub fn new(weights: Vec<f64>, rho: f64, sigma2: f64, nugget: f64) -> Result<Self> {
        let model = SieveCovariance {
            m: weights.len(),
            weights,
            rho,
            sigma2,
            nugget,
        };
        model.validate()?;
        Ok(model)
    }

    /// Unit-range, unit-variance correlation model with the given weights.
    pub fn correlation_model(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights, 1.0, 1.0, 0.0)
    }

    /// Uniform weights `(1/m, …, 1/m)`.
    pub fn uniform(m: usize, rho: f64, sigma2: f64, nugget: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::domain("sieve order must be at least 1"));
        }
        Self::new(vec![1.0 / m as f64; m], rho, sigma2, nugget)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.weights.len() != self.m {
            return Err(Error::domain(format!(
                "sieve order {} does not match {} weights",
                self.m,
                self.weights.len()
            )));
        }
        check_simplex(&self.weights)?;
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::domain(format!("range must be positive, got {}", self.rho)));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::domain(format!("variance must be positive, got {}", self.sigma2)));
        }
        if !(self.nugget >= 0.0) || !self.nugget.is_finite() {
            return Err(Error::domain(format!("nugget must be nonnegative, got {}", self.nugget)));
        }
        Ok(())
    }

    /// Correlation `Σ w_k A_{k,m}(h/ρ)` (nugget excluded).
    pub fn correlation_at(&self, h: f64) -> f64 {
        let t = (h / self.rho).powi(2);
        let mut acc = 1.0;
        let mut sum = 0.0;
        for k in (1..=self.m).rev() {
            acc /= 1.0 + t / k as f64;
            sum += self.weights[k - 1] * acc;
        }
        sum
    }

    /// The same function expressed in the order `m + 1` sieve.
    pub fn lifted(&self) -> Result<Self> {
        Self::new(lift_weights(&self.weights)?, self.rho, self.sigma2, self.nugget)
    }
}

impl IsotropicCovariance for SieveCovariance {
    fn continuous_part(&self, h: f64) -> f64 {
        self.sigma2 * self.correlation_at(h)
    }

    fn nugget(&self) -> f64 {
        self.nugget
    }
}

pub(crate) fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::domain("weight vector is empty"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::domain(format!("weights must be finite and nonnegative, found {w}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::domain(format!("weights must sum to 1, sum is {sum}")));
    }
    Ok(())
}

/// `C_m(h)` for a sieve model, with the nugget added at `h = 0`.
pub fn cov_eval(model: &SieveCovariance, h: f64) -> Result<f64> {
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::domain(format!("lag must be finite and nonnegative, got {h}")));
    }
    Ok(model.eval(h))
}

/// Lifts Bernstein-form coefficients of order `m` to order `m + 1`.
///
/// With `g_m(s) = Σ_k c_k C(m-1,k-1) s^{k-1}(1-s)^{m-k}`, the returned
/// coefficients describe the same polynomial in the degree-`m` Bernstein basis,
/// so `(1/m) Σ w_k A_{k,m} ≡ (1/(m+1)) Σ c_k A_{k,m+1}`.
pub fn lift_coefficients(w: &[f64]) -> Result<Vec<f64>> {
    let m = w.len();
    if m == 0 {
        return Err(Error::domain("cannot lift an empty coefficient vector"));
    }
    if let Some(x) = w.iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::domain(format!("coefficients must be nonnegative, found {x}")));
    }
    let mut c = Vec::with_capacity(m + 1);
    c.push(w[0]);
    let mf = m as f64;
    for k in 2..=m {
        // (w_k C(m-1,k-1) + w_{k-1} C(m-1,k-2)) / C(m,k-1), written with ratios
        // C(m-1,k-1)/C(m,k-1) = (m-k+1)/m and C(m-1,k-2)/C(m,k-1) = (k-1)/m.
        let a = (m - k + 1) as f64 / mf;
        let b = (k - 1) as f64 / mf;
        c.push(w[k - 1] * a + w[k - 2] * b);
    }
    c.push(w[m - 1]);
    Ok(c)
}

/// Lifts simplex weights of order `m` to simplex weights of order `m + 1`
/// describing the identical correlation function.
pub fn lift_weights(weights: &[f64]) -> Result<Vec<f64>> {
    let m = weights.len() as f64;
    let coeffs: Vec<f64> = weights.iter().map(|w| w * m).collect();
    let lifted = lift_coefficients(&coeffs)?;
    Ok(lifted.into_iter().map(|c| c / (m + 1.0)).collect())
}

/// `Σ_k w_k C(m-1,k-1) s^{k-1} (1-s)^{m-k}` given `s` and `1 - s` separately.
fn bernstein_mixture(weights: &[f64], s: f64, one_minus_s: f64) -> f64 {
    let m = weights.len();
    let deg = (m - 1) as u64;
    if m <= 60 {
        weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| {
                w * special::binomial(deg, i as u64)
                    * s.powi(i as i32)
                    * one_minus_s.powi((m - 1 - i) as i32)
            })
            .sum()
    } else {
        let (ls, l1s) = (s.ln(), one_minus_s.ln());
        weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| {
                let j = (m - 1 - i) as f64;
                let lp = special::ln_binomial(deg, i as u64)
                    + if i == 0 { 0.0 } else { i as f64 * ls }
                    + if j == 0.0 { 0.0 } else { j * l1s };
                w * lp.exp()
            })
            .sum()
    }
}

/// Bernstein-form mixing density `g_m(s)` on `[0, 1]` implied by the weights.
pub fn g_density(model: &SieveCovariance, s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::domain(format!("g_density requires s in [0,1], got {s}")));
    }
    Ok(bernstein_mixture(&model.weights, s, 1.0 - s))
}

/// Spectral density `f_m(r) = 2r e^{-r²} g_m(e^{-r²})` of the unit-range shape.
pub fn spectral_density_f(model: &SieveCovariance, r: f64) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::domain(format!("spectral density requires r >= 0, got {r}")));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let r2 = r * r;
    let s = (-r2).exp();
    let one_minus_s = -(-r2).exp_m1();
    Ok(2.0 * r * s * bernstein_mixture(&model.weights, s, one_minus_s))
}

/// `∫_0^∞ f_m(r) dr = Σ_k w_k C(m-1,k-1) B(k, m-k+1)`.
pub fn spectral_mass(model: &SieveCovariance) -> f64 {
    let m = model.m;
    model
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let k = i + 1;
            w * (special::ln_binomial((m - 1) as u64, i as u64)
                + special::ln_beta(k as f64, (m - k + 1) as f64))
            .exp()
        })
        .sum()
}
