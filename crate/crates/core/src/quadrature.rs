//! Composite Gauss–Legendre rules on `[0, H]` and `[0, ∞)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess, then Newton on P_n
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() <= 1e-16 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d.is_finite() {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelLayout {
    Uniform,
    /// One panel `[0, h₀]`, then geometrically growing panels up to `H`.
    LogSpaced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailTreatment {
    /// Integrate `[0, H]` only; the `(1+h²)⁻²` envelope bound must be below the tolerance.
    Truncate,
    /// Add `∫_H^∞` through the substitution `h = H/u`.
    Mapped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub upper_limit: f64,
    pub panels: usize,
    pub points_per_panel: usize,
    pub tail_tolerance: f64,
    pub layout: PanelLayout,
    pub tail: TailTreatment,
    /// Panels used on `u ∈ (0, 1]` when the tail is mapped.
    pub tail_panels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            upper_limit: 50.0,
            panels: 48,
            points_per_panel: 20,
            tail_tolerance: 1e-5,
            layout: PanelLayout::LogSpaced,
            tail: TailTreatment::Mapped,
            tail_panels: 8,
        }
    }
}

impl QuadratureConfig {
    /// Default rule with `H = 50·max(ρ, 1)`.
    pub fn for_range(rho: f64) -> Self {
        QuadratureConfig {
            upper_limit: 50.0 * rho.max(1.0),
            ..Default::default()
        }
    }

    /// Truncated rule for slowly decaying targets: `H = 10³`, log-spaced panels.
    pub fn slow_decay() -> Self {
        QuadratureConfig {
            upper_limit: 1e3,
            panels: 96,
            points_per_panel: 20,
            tail_tolerance: 1e-5,
            layout: PanelLayout::LogSpaced,
            tail: TailTreatment::Truncate,
            tail_panels: 0,
        }
    }

    /// Same rule with twice as many panels on both pieces.
    pub fn refined(&self) -> Self {
        QuadratureConfig {
            panels: 2 * self.panels,
            tail_panels: 2 * self.tail_panels,
            ..self.clone()
        }
    }

    /// Relative mass of `(1+h²)⁻²` beyond `H`.
    pub fn envelope_tail(&self) -> f64 {
        let h = self.upper_limit;
        // ∫_H^∞ (1+h²)^{-2} = ½ atan(1/H) − H / (2(1+H²))
        let tail = 0.5 * (1.0 / h).atan() - h / (2.0 * (1.0 + h * h));
        tail.max(0.0) / std::f64::consts::FRAC_PI_4
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.upper_limit > 0.0) || !self.upper_limit.is_finite() {
            return Err(Error::domain(format!(
                "quadrature upper limit must be positive, got {}",
                self.upper_limit
            )));
        }
        if self.panels == 0 || self.points_per_panel == 0 {
            return Err(Error::domain("quadrature needs at least one panel and one point"));
        }
        if !(self.tail_tolerance > 0.0) {
            return Err(Error::domain("tail tolerance must be positive"));
        }
        match self.tail {
            TailTreatment::Truncate => {
                let tail = self.envelope_tail();
                if tail >= self.tail_tolerance {
                    return Err(Error::domain(format!(
                        "truncation at H = {} leaves relative envelope tail {tail:e} above tolerance {:e}",
                        self.upper_limit, self.tail_tolerance
                    )));
                }
            }
            TailTreatment::Mapped => {
                if self.tail_panels == 0 {
                    return Err(Error::domain("mapped tail needs at least one panel"));
                }
            }
        }
        Ok(())
    }

    fn edges(&self) -> Vec<f64> {
        let h = self.upper_limit;
        let p = self.panels;
        match self.layout {
            PanelLayout::Uniform => (0..=p).map(|i| h * i as f64 / p as f64).collect(),
            PanelLayout::LogSpaced => {
                if p == 1 {
                    return vec![0.0, h];
                }
                let h0 = (h / p as f64).min(0.5);
                let ratio = (h / h0).ln();
                let mut e = Vec::with_capacity(p + 1);
                e.push(0.0);
                for i in 0..p {
                    e.push(h0 * (ratio * i as f64 / (p - 1) as f64).exp());
                }
                e[p] = h;
                e
            }
        }
    }

    pub fn rule(&self) -> Result<QuadratureRule> {
        self.validate()?;
        let (gx, gw) = gauss_legendre(self.points_per_panel);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        push_composite(&self.edges(), &gx, &gw, |x, w| {
            nodes.push(x);
            weights.push(w);
        });
        if self.tail == TailTreatment::Mapped {
            let h = self.upper_limit;
            let p = self.tail_panels;
            let edges: Vec<f64> = (0..=p).map(|i| i as f64 / p as f64).collect();
            push_composite(&edges, &gx, &gw, |u, w| {
                nodes.push(h / u);
                weights.push(w * h / (u * u));
            });
        }
        Ok(QuadratureRule { nodes, weights })
    }
}

fn push_composite(edges: &[f64], gx: &[f64], gw: &[f64], mut push: impl FnMut(f64, f64)) {
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in gx.iter().zip(gw) {
            push(mid + half * x, half * w);
        }
    }
}

/// A fixed set of nodes and weights for `∫ f(h) dh`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        for n in [1, 2, 5, 12, 20, 33] {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-14);
            for deg in 0..2 * n {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((got - want).abs() < 1e-13, "n={n} deg={deg}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn known_three_point_rule() {
        let (x, w) = gauss_legendre(3);
        assert_relative_eq!(x[2], (0.6f64).sqrt(), max_relative = 1e-15);
        assert_relative_eq!(w[1], 8.0 / 9.0, max_relative = 1e-15);
        assert_relative_eq!(w[0], 5.0 / 9.0, max_relative = 1e-15);
    }

    #[test]
    fn half_line_integrals() {
        let rule = QuadratureConfig::default().rule().unwrap();
        let pi = std::f64::consts::PI;
        assert_relative_eq!(rule.integrate(|h| (1.0 + h * h).powi(-2)), pi / 4.0, max_relative = 1e-12);
        assert_relative_eq!(rule.integrate(|h| (-h * h).exp()), pi.sqrt() / 2.0, max_relative = 1e-12);
        assert_relative_eq!(rule.integrate(|h| 1.0 / (1.0 + h * h)), pi / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn truncated_rule_matches_finite_integral() {
        let q = QuadratureConfig::slow_decay();
        let rule = q.rule().unwrap();
        let got = rule.integrate(|h| 1.0 / (1.0 + h * h));
        assert_relative_eq!(got, (1e3f64).atan(), max_relative = 1e-12);
    }

    #[test]
    fn truncation_below_envelope_tolerance_is_rejected() {
        let q = QuadratureConfig {
            upper_limit: 5.0,
            tail: TailTreatment::Truncate,
            ..Default::default()
        };
        assert!(q.envelope_tail() > 1e-5);
        assert!(q.rule().is_err());
        let q = QuadratureConfig {
            upper_limit: 50.0,
            tail: TailTreatment::Truncate,
            ..Default::default()
        };
        assert!(q.envelope_tail() < 1e-5);
        assert!(q.rule().is_ok());
    }

    #[test]
    fn envelope_tail_matches_asymptotics() {
        let q = QuadratureConfig {
            upper_limit: 1e3,
            ..Default::default()
        };
        let expect = 1.0 / (3.0 * 1e9) / std::f64::consts::FRAC_PI_4;
        assert_relative_eq!(q.envelope_tail(), expect, max_relative = 1e-5);
    }

    #[test]
    fn uniform_layout_and_bad_config() {
        let q = QuadratureConfig {
            layout: PanelLayout::Uniform,
            panels: 200,
            ..Default::default()
        };
        let rule = q.rule().unwrap();
        assert_relative_eq!(rule.integrate(|h| (-h).exp()), 1.0, max_relative = 1e-12);
        let bad = QuadratureConfig {
            upper_limit: -1.0,
            ..Default::default()
        };
        assert!(bad.rule().is_err());
    }
}
