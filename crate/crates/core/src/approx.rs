//! Best sieve approximation of a target covariance in `L²[0, ∞)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::basis_all;
use crate::error::{Error, Result};
use crate::qp::solve_simplex_qp;
use crate::quadrature::{QuadratureConfig, QuadratureRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxResult {
    pub m: usize,
    pub weights: Vec<f64>,
    pub rae: f64,
    pub l2_error: f64,
}

impl ApproxResult {
    /// The approximant `Σ w_k A_{k,m}(h)`.
    pub fn eval(&self, h: f64) -> f64 {
        let mut a = vec![0.0; self.m];
        basis_all(self.m, h, &mut a);
        a.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MSelection {
    pub result: ApproxResult,
    /// `false` when no order in the grid reached the threshold; `result` is then the last order.
    pub qualified: bool,
    /// `(m, rae)` for every order that was solved, in evaluation order.
    pub trace: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MSearch {
    /// Walk the grid in order and stop at the first qualifying order.
    #[default]
    Linear,
    /// Binary search; valid because the optimal error is nonincreasing over nested sieves.
    Bisect,
}

/// A target sampled on a quadrature rule, reused across orders.
struct Discretized {
    rule: QuadratureRule,
    target: Vec<f64>,
    target_norm: f64,
}

impl Discretized {
    fn new<F: Fn(f64) -> f64>(c0: F, q: &QuadratureConfig) -> Result<Self> {
        let rule = q.rule()?;
        let target: Vec<f64> = rule.nodes.iter().map(|&h| c0(h)).collect();
        if let Some(i) = target.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!(
                "target covariance is not finite at h = {}",
                rule.nodes[i]
            )));
        }
        let target_norm = rule
            .weights
            .iter()
            .zip(&target)
            .map(|(w, c)| w * c * c)
            .sum::<f64>()
            .sqrt();
        Ok(Discretized {
            rule,
            target,
            target_norm,
        })
    }

    fn gram(&self, m: usize) -> Result<DMatrix<f64>> {
        if m == 0 {
            return Err(Error::domain("sieve order must be at least 1"));
        }
        let nq = self.rule.len();
        let mut d = DMatrix::zeros(nq, m);
        let mut a = vec![0.0; m];
        for (q, (&h, &w)) in self.rule.nodes.iter().zip(&self.rule.weights).enumerate() {
            basis_all(m, h, &mut a);
            let sw = w.sqrt();
            for k in 0..m {
                d[(q, k)] = sw * (a[k] - self.target[q]);
            }
        }
        let g = d.tr_mul(&d);
        repair_psd((&g + g.transpose()) * 0.5)
    }

    fn l2_error(&self, weights: &[f64]) -> f64 {
        let m = weights.len();
        let mut a = vec![0.0; m];
        let mut acc = 0.0;
        for ((&h, &w), &c) in self.rule.nodes.iter().zip(&self.rule.weights).zip(&self.target) {
            basis_all(m, h, &mut a);
            let fit: f64 = a.iter().zip(weights).map(|(a, w)| a * w).sum();
            acc += w * (c - fit) * (c - fit);
        }
        acc.sqrt()
    }

    fn check_norm(&self) -> Result<()> {
        if self.target_norm < 1e-12 {
            return Err(Error::DegenerateTarget(format!(
                "target L2 norm {:e} is numerically zero",
                self.target_norm
            )));
        }
        Ok(())
    }

    fn approximate(&self, m: usize) -> Result<ApproxResult> {
        self.check_norm()?;
        let weights = solve_simplex_qp(&self.gram(m)?)?.weights;
        let l2_error = self.l2_error(&weights);
        Ok(ApproxResult {
            m,
            rae: l2_error / self.target_norm,
            l2_error,
            weights,
        })
    }
}

/// Adds `1e-12·trace/m` to the diagonal when Cholesky fails; errors if that is not enough.
fn repair_psd(mut g: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g.clone().cholesky().is_some() {
        return Ok(g);
    }
    let m = g.nrows();
    let jitter = 1e-12 * g.trace() / m as f64;
    for i in 0..m {
        g[(i, i)] += jitter;
    }
    if g.clone().cholesky().is_some() {
        return Ok(g);
    }
    let smallest = g.clone().symmetric_eigenvalues().min();
    Err(Error::Conditioning {
        context: format!("Gram matrix of order {m} is indefinite beyond the jitter budget"),
        smallest_pivot: smallest,
    })
}

/// `M_ij = ∫ (A_{i,m} − C₀)(A_{j,m} − C₀) dh`, symmetrized and PSD-repaired.
pub fn build_gram_matrix<F: Fn(f64) -> f64>(c0: F, m: usize, q: &QuadratureConfig) -> Result<DMatrix<f64>> {
    Discretized::new(c0, q)?.gram(m)
}

/// `‖C₀ − Σ w_k A_{k,m}‖₂ / ‖C₀‖₂` with `m = weights.len()`.
pub fn rae<F: Fn(f64) -> f64>(c0: F, weights: &[f64], q: &QuadratureConfig) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::domain("weight vector is empty"));
    }
    let disc = Discretized::new(c0, q)?;
    disc.check_norm()?;
    Ok(disc.l2_error(weights) / disc.target_norm)
}

/// Optimal order-`m` approximation of `c0`.
pub fn approximate<F: Fn(f64) -> f64>(c0: F, m: usize, q: &QuadratureConfig) -> Result<ApproxResult> {
    Discretized::new(c0, q)?.approximate(m)
}

/// The smallest `m` in `m_grid` whose optimal approximation has RAE below `threshold`.
pub fn select_min_m<F: Fn(f64) -> f64>(
    c0: F,
    threshold: f64,
    m_grid: &[usize],
    q: &QuadratureConfig,
    search: MSearch,
) -> Result<MSelection> {
    if m_grid.is_empty() {
        return Err(Error::domain("order grid is empty"));
    }
    if m_grid.windows(2).any(|p| p[0] >= p[1]) || m_grid[0] == 0 {
        return Err(Error::domain("order grid must be positive and strictly increasing"));
    }
    if !(threshold > 0.0) {
        return Err(Error::domain(format!("threshold must be positive, got {threshold}")));
    }
    let disc = Discretized::new(c0, q)?;
    disc.check_norm()?;
    let mut trace = Vec::new();
    let mut solve = |m: usize| -> Result<ApproxResult> {
        let r = disc.approximate(m)?;
        trace.push((m, r.rae));
        Ok(r)
    };

    let (result, qualified) = match search {
        MSearch::Linear => {
            let mut last = None;
            let mut found = None;
            for &m in m_grid {
                let r = solve(m)?;
                if r.rae < threshold {
                    found = Some(r);
                    break;
                }
                last = Some(r);
            }
            match found {
                Some(r) => (r, true),
                None => (last.expect("grid is nonempty"), false),
            }
        }
        MSearch::Bisect => {
            let top = solve(*m_grid.last().unwrap())?;
            if top.rae >= threshold {
                (top, false)
            } else {
                // invariant: grid[hi] qualifies, everything below lo does not
                let (mut lo, mut hi) = (0usize, m_grid.len() - 1);
                let mut best = top;
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    let r = solve(m_grid[mid])?;
                    if r.rae < threshold {
                        hi = mid;
                        best = r;
                    } else {
                        lo = mid + 1;
                    }
                }
                (best, true)
            }
        }
    };
    Ok(MSelection {
        result,
        qualified,
        trace,
    })
}
