//! Parametric covariance families used as simulation truths and baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covariance::IsotropicCovariance;
use crate::error::{Error, Result};
use crate::special;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `(σ², ρ, ν)`
    Matern,
    /// `(σ², ρ)`
    Cauchy,
    /// `(σ², ρ)`
    Gaussian,
    /// `(σ², ρ, κ₁, κ₂)`
    GenCauchy,
    /// `(σ², ρ₁, ρ₂, ν₁, ν₂)`, equal-weight mixture of two Matérn components
    LinearMatern,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Matern,
        Family::Cauchy,
        Family::Gaussian,
        Family::GenCauchy,
        Family::LinearMatern,
    ];

    pub fn n_params(self) -> usize {
        match self {
            Family::Matern => 3,
            Family::Cauchy | Family::Gaussian => 2,
            Family::GenCauchy => 4,
            Family::LinearMatern => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Matern => "matern",
            Family::Cauchy => "cauchy",
            Family::Gaussian => "gaussian",
            Family::GenCauchy => "gencauchy",
            Family::LinearMatern => "linearmatern",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Family::ALL
            .into_iter()
            .find(|f| f.name() == key)
            .ok_or_else(|| Error::validation(format!("unknown covariance family '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricCovariance {
    pub family: Family,
    pub params: Vec<f64>,
    #[serde(default)]
    pub nugget: f64,
}

impl ParametricCovariance {
    pub fn new(family: Family, params: Vec<f64>, nugget: f64) -> Result<Self> {
        let model = ParametricCovariance {
            family,
            params,
            nugget,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn matern(sigma2: f64, rho: f64, nu: f64) -> Result<Self> {
        Self::new(Family::Matern, vec![sigma2, rho, nu], 0.0)
    }

    pub fn cauchy(sigma2: f64, rho: f64) -> Result<Self> {
        Self::new(Family::Cauchy, vec![sigma2, rho], 0.0)
    }

    pub fn gaussian(sigma2: f64, rho: f64) -> Result<Self> {
        Self::new(Family::Gaussian, vec![sigma2, rho], 0.0)
    }

    pub fn gen_cauchy(sigma2: f64, rho: f64, kappa1: f64, kappa2: f64) -> Result<Self> {
        Self::new(Family::GenCauchy, vec![sigma2, rho, kappa1, kappa2], 0.0)
    }

    pub fn linear_matern(sigma2: f64, rho1: f64, rho2: f64, nu1: f64, nu2: f64) -> Result<Self> {
        Self::new(Family::LinearMatern, vec![sigma2, rho1, rho2, nu1, nu2], 0.0)
    }

    pub fn with_nugget(mut self, nugget: f64) -> Result<Self> {
        self.nugget = nugget;
        self.validate()?;
        Ok(self)
    }

    pub fn sigma2(&self) -> f64 {
        self.params[0]
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        if p.len() != self.family.n_params() {
            return Err(Error::domain(format!(
                "{} expects {} parameters, got {}",
                self.family,
                self.family.n_params(),
                p.len()
            )));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("parameters must be finite"));
        }
        let positive = |x: f64, what: &str| {
            if x > 0.0 {
                Ok(())
            } else {
                Err(Error::domain(format!("{} requires {what} > 0, got {x}", self.family)))
            }
        };
        positive(p[0], "sigma2")?;
        match self.family {
            Family::Matern => {
                positive(p[1], "rho")?;
                positive(p[2], "nu")?;
            }
            Family::Cauchy | Family::Gaussian => positive(p[1], "rho")?,
            Family::GenCauchy => {
                positive(p[1], "rho")?;
                positive(p[2], "kappa1")?;
                if !(p[3] > 0.0 && p[3] <= 2.0) {
                    return Err(Error::domain(format!("gencauchy requires kappa2 in (0, 2], got {}", p[3])));
                }
            }
            Family::LinearMatern => {
                for (x, what) in p[1..].iter().zip(["rho1", "rho2", "nu1", "nu2"]) {
                    positive(*x, what)?;
                }
            }
        }
        if !(self.nugget >= 0.0) || !self.nugget.is_finite() {
            return Err(Error::domain(format!("nugget must be nonnegative, got {}", self.nugget)));
        }
        Ok(())
    }
}

/// Matérn correlation `2^{1-ν}/Γ(ν) u^ν K_ν(u)` at `u = h/ρ`.
pub fn matern_correlation(u: f64, nu: f64) -> f64 {
    if u == 0.0 {
        return 1.0;
    }
    // in logs: u^ν K_ν(u) overflows/underflows separately at the extremes
    let ln_k = match special::ln_bessel_k(nu, u) {
        Ok(v) => v,
        Err(_) => return f64::NAN,
    };
    let ln_val = (1.0 - nu) * std::f64::consts::LN_2 - special::ln_gamma(nu) + nu * u.ln() + ln_k;
    ln_val.exp().min(1.0)
}

impl IsotropicCovariance for ParametricCovariance {
    fn continuous_part(&self, h: f64) -> f64 {
        let p = &self.params;
        match self.family {
            Family::Matern => p[0] * matern_correlation(h / p[1], p[2]),
            Family::Cauchy => {
                let u = h / p[1];
                p[0] / (1.0 + u * u).sqrt()
            }
            Family::Gaussian => {
                let u = h / p[1];
                p[0] * (-u * u).exp()
            }
            Family::GenCauchy => {
                let u = h / p[1];
                p[0] * (1.0 + u.powf(p[3])).powf(-p[2] / p[3])
            }
            Family::LinearMatern => {
                p[0] * 0.5 * (matern_correlation(h / p[1], p[3]) + matern_correlation(h / p[2], p[4]))
            }
        }
    }

    fn nugget(&self) -> f64 {
        self.nugget
    }
}

/// `C(h)` including the nugget at `h = 0`.
pub fn eval_parametric(model: &ParametricCovariance, h: f64) -> Result<f64> {
    model.validate()?;
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::domain(format!("lag must be finite and nonnegative, got {h}")));
    }
    Ok(model.eval(h))
}

/// `γ(h) = C(0) - C(h)` for `h > 0`, zero at the origin.
pub fn semivariogram_of<C: IsotropicCovariance + ?Sized>(model: &C, h: f64) -> f64 {
    model.semivariogram(h)
}
