//! Special functions: log-Gamma, log-Gamma differences and the modified Bessel
//! function of the second kind.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Arguments below this are shifted upward before the Stirling series is used.
const STIRLING_MIN: f64 = 15.0;

/// Stirling correction `lnΓ(x) - [(x-1/2)ln x - x + ln(2π)/2]` for `x >= 15`.
fn stirling_correction(x: f64) -> f64 {
    // Bernoulli terms B_2k / (2k(2k-1) x^(2k-1)); at x = 15 the ninth term is < 1e-22.
    const C: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
        -3617.0 / 122_400.0,
    ];
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut acc = 0.0;
    for c in C.iter().rev() {
        acc = acc * inv2 + c;
    }
    acc * inv
}

/// Natural log of the Gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x >= STIRLING_MIN {
        return (x - 0.5) * x.ln() - x + HALF_LN_2PI + stirling_correction(x);
    }
    let shift = (STIRLING_MIN - x).ceil();
    let mut prod = 1.0;
    let mut y = x;
    while y < STIRLING_MIN {
        prod *= y;
        y += 1.0;
    }
    debug_assert!((y - (x + shift)).abs() < 1e-9);
    ln_gamma(y) - prod.ln()
}

/// Gamma function for moderate positive arguments.
pub fn gamma(x: f64) -> f64 {
    ln_gamma(x).exp()
}

/// `lnΓ(x + d) - lnΓ(x)` for `x >= 15`, arranged so that no term grows like `x ln x`.
fn ln_gamma_diff_large(x: f64, d: f64) -> f64 {
    (x - 0.5) * (d / x).ln_1p() + d * (x + d).ln() - d + stirling_correction(x + d)
        - stirling_correction(x)
}

/// `lnΓ(x + d) - lnΓ(x)` for `x > 0`, `d >= 0`.
pub fn ln_gamma_diff(x: f64, d: f64) -> f64 {
    let mut shifted = x;
    let mut acc = 0.0;
    while shifted < STIRLING_MIN {
        // Γ(y+d)/Γ(y) = [y/(y+d)] Γ(y+1+d)/Γ(y+1)
        acc -= (d / shifted).ln_1p();
        shifted += 1.0;
    }
    acc + ln_gamma_diff_large(shifted, d)
}

/// `ln Beta(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(b) - ln_gamma_diff(a, b)
}

/// `ln[Beta(k + t, n) / Beta(k, n)]` for `k > 0`, `n > 0`, `t >= 0`.
///
/// Both Beta terms share `lnΓ(n)`, so the ratio reduces to
/// `D(k, n) - D(k + t, n)` with `D(x, n) = lnΓ(x + n) - lnΓ(x)`. The two
/// Stirling expansions are combined before evaluation, which keeps every
/// intermediate bounded by roughly `n ln(1 + t/k)` instead of `n ln(k + t + n)`.
pub fn ln_beta_ratio(k: f64, t: f64, n: f64) -> f64 {
    let mut x = k;
    let mut acc = 0.0;
    while x < STIRLING_MIN {
        acc += (n / (x + t)).ln_1p() - (n / x).ln_1p();
        x += 1.0;
    }
    let y = x + t;
    acc + (x - 0.5) * (n / x).ln_1p() - (y - 0.5) * (n / y).ln_1p() - n * (t / (x + n)).ln_1p()
        + (stirling_correction(x + n) - stirling_correction(x))
        - (stirling_correction(y + n) - stirling_correction(y))
}

/// `ln C(n, k)`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma((n + 1) as f64) - ln_gamma((k + 1) as f64) - ln_gamma((n - k + 1) as f64)
}

/// Binomial coefficient as a float (exact for small arguments).
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n <= 60 {
        let mut acc = 1.0_f64;
        for i in 0..k {
            acc = acc * (n - i) as f64 / (i + 1) as f64;
        }
        acc.round()
    } else {
        ln_binomial(n, k).exp()
    }
}

// Chebyshev coefficients for the Temme auxiliary functions
// g1(ν) = (1/Γ(1-ν) - 1/Γ(1+ν)) / (2ν) and g2(ν) = (1/Γ(1-ν) + 1/Γ(1+ν)) / 2
// on |ν| <= 1/2, in the variable 4|ν| - 1.
const TEMME_G1: [f64; 14] = [
    -1.145_164_083_662_683,
    0.006_360_853_113_470_843,
    0.001_862_451_930_072_068_5,
    0.000_152_833_085_873_453_5,
    0.000_017_017_464_011_802_04,
    -6.459_750_292_334_725e-7,
    -5.181_984_843_251_938e-8,
    4.518_909_289_485_818e-10,
    3.243_322_737_102_087e-11,
    6.830_943_402_494_752e-13,
    2.835_350_275_517_21e-14,
    -7.988_390_576_932_359e-16,
    -3.372_667_730_077_195e-17,
    -3.658_633_480_921_052e-20,
];

const TEMME_G2: [f64; 15] = [
    1.882_645_524_949_671_8,
    -0.077_490_658_396_167_52,
    -0.018_256_714_847_324_93,
    0.000_633_803_020_907_489_6,
    0.000_076_229_054_350_872_9,
    -9.550_164_756_172_044e-7,
    -8.892_726_810_788_635e-8,
    -1.952_133_477_231_961_4e-9,
    -9.400_305_273_588_516e-11,
    4.687_513_384_953_239e-12,
    2.265_853_574_692_576e-13,
    -1.172_550_969_848_801_5e-15,
    -7.044_133_820_024_522e-17,
    -2.437_787_831_010_769_4e-18,
    -7.522_524_321_825_39e-20,
];

fn chebyshev(coeffs: &[f64], x: f64) -> f64 {
    let y2 = 2.0 * x;
    let (mut d, mut dd) = (0.0, 0.0);
    for &c in coeffs[1..].iter().rev() {
        let tmp = d;
        d = y2 * d - dd + c;
        dd = tmp;
    }
    x * d - dd + 0.5 * coeffs[0]
}

/// Returns `(Γ(1+μ), Γ(1-μ), g1, g2)` for `|μ| <= 1/2`.
fn temme_gamma(mu: f64) -> (f64, f64, f64, f64) {
    let x = 4.0 * mu.abs() - 1.0;
    let g1 = chebyshev(&TEMME_G1, x);
    let g2 = chebyshev(&TEMME_G2, x);
    let gamma_1mmu = 1.0 / (g2 + mu * g1);
    let gamma_1pmu = 1.0 / (g2 - mu * g1);
    (gamma_1pmu, gamma_1mmu, g1, g2)
}

/// Temme's series for `e^x K_μ(x)` and `e^x K_{μ+1}(x)`, `|μ| <= 1/2`, `0 < x <= 2`.
fn k_scaled_temme(mu: f64, x: f64) -> (f64, f64) {
    let half_x = 0.5 * x;
    let ln_half_x = half_x.ln();
    let half_x_mu = (mu * ln_half_x).exp();
    let pi_mu = PI * mu;
    let sigma = -mu * ln_half_x;
    let sinrat = if pi_mu.abs() < f64::EPSILON {
        1.0
    } else {
        pi_mu / pi_mu.sin()
    };
    let sinhrat = if sigma.abs() < f64::EPSILON {
        1.0
    } else {
        sigma.sinh() / sigma
    };
    let (gamma_1pmu, gamma_1mmu, g1, g2) = temme_gamma(mu);

    let mut fk = sinrat * (sigma.cosh() * g1 - sinhrat * ln_half_x * g2);
    let mut pk = 0.5 / half_x_mu * gamma_1pmu;
    let mut qk = 0.5 * half_x_mu * gamma_1mmu;
    let mut ck = 1.0;
    let mut sum0 = fk;
    let mut sum1 = pk;
    for k in 1..20_000 {
        let kf = k as f64;
        fk = (kf * fk + pk + qk) / (kf * kf - mu * mu);
        ck *= half_x * half_x / kf;
        pk /= kf - mu;
        qk /= kf + mu;
        let hk = -kf * fk + pk;
        let del0 = ck * fk;
        sum0 += del0;
        sum1 += ck * hk;
        if del0.abs() < 0.5 * sum0.abs() * f64::EPSILON {
            break;
        }
    }
    let ex = x.exp();
    (sum0 * ex, sum1 * 2.0 / x * ex)
}

/// Steed's continued fraction (CF2) for `e^x K_μ(x)` and `e^x K_{μ+1}(x)`, `x > 2`.
fn k_scaled_steed(mu: f64, x: f64) -> (f64, f64) {
    let mut bi = 2.0 * (1.0 + x);
    let mut di = 1.0 / bi;
    let mut delhi = di;
    let mut hi = di;
    let mut qi = 0.0;
    let mut qip1 = 1.0;
    let mut ai = -(0.25 - mu * mu);
    let a1 = ai;
    let mut ci = -ai;
    let mut bqi = -ai;
    let mut s = 1.0 + bqi * delhi;
    for i in 2..20_000 {
        ai -= 2.0 * (i - 1) as f64;
        ci = -ai * ci / i as f64;
        let tmp = (qi - bi * qip1) / ai;
        qi = qip1;
        qip1 = tmp;
        bqi += ci * qip1;
        bi += 2.0;
        di = 1.0 / (bi + ai * di);
        delhi *= bi * di - 1.0;
        hi += delhi;
        let dels = bqi * delhi;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    hi *= -a1;
    let k_mu = (PI / (2.0 * x)).sqrt() / s;
    let k_mup1 = k_mu * (mu + x + 0.5 - hi) / x;
    (k_mu, k_mup1)
}

/// Closed form for half-integer orders `ν = n + 1/2`.
fn bessel_k_half_integer(n: u32, x: f64) -> f64 {
    // K_{n+1/2}(x) = sqrt(π/(2x)) e^{-x} Σ_{k=0}^{n} (n+k)! / (k! (n-k)! (2x)^k)
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 0..n {
        let k = k as f64;
        let nf = n as f64;
        term *= (nf + k + 1.0) * (nf - k) / ((k + 1.0) * 2.0 * x);
        sum += term;
    }
    (PI / (2.0 * x)).sqrt() * (-x).exp() * sum
}

/// `e^x K_ν(x)`; avoids underflow for large `x`.
pub fn bessel_k_scaled(nu: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("bessel_k requires x > 0, got {x}")));
    }
    if !nu.is_finite() {
        return Err(Error::Domain(format!("bessel_k requires finite order, got {nu}")));
    }
    let nu = nu.abs();
    let frac = nu - 0.5;
    if (frac - frac.round()).abs() < 1e-14 && frac >= -1e-14 && nu < 50.0 {
        return Ok(bessel_k_half_integer(frac.round() as u32, x) * x.exp());
    }
    let steps = (nu + 0.5).floor();
    let mu = nu - steps;
    let (mut k_nu, mut k_nup1) = if x <= 2.0 {
        k_scaled_temme(mu, x)
    } else {
        k_scaled_steed(mu, x)
    };
    for n in 0..steps as u32 {
        let k_num1 = k_nu;
        k_nu = k_nup1;
        k_nup1 = 2.0 * (mu + n as f64 + 1.0) / x * k_nu + k_num1;
    }
    Ok(k_nu)
}

/// Modified Bessel function of the second kind `K_ν(x)` for real `ν` and `x > 0`.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    Ok(bessel_k_scaled(nu, x)? * (-x).exp())
}

/// `ln K_ν(x)`, finite wherever `K_ν(x)` is representable in log space.
pub fn ln_bessel_k(nu: f64, x: f64) -> Result<f64> {
    Ok(bessel_k_scaled(nu, x)?.ln() - x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Independent route: K_ν(x) = ∫_0^∞ exp(-x cosh t) cosh(νt) dt.
    fn bessel_k_integral(nu: f64, x: f64) -> f64 {
        // integrate in scaled form e^{-x(cosh t - 1)} and rescale
        let upper = ((750.0 / x) + 1.0).acosh() + 1.0;
        let panels = 4000;
        let h = upper / panels as f64;
        let mut sum = 0.0;
        // composite Simpson
        for i in 0..=panels {
            let t = i as f64 * h;
            let f = (-x * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
            let w = if i == 0 || i == panels {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += w * f;
        }
        sum * h / 3.0 * (-x).exp()
    }

    #[test]
    fn ln_gamma_integers() {
        let mut fact = 1.0_f64;
        for n in 1..30u32 {
            if n > 1 {
                fact *= (n - 1) as f64;
            }
            assert_relative_eq!(ln_gamma(n as f64), fact.ln(), epsilon = 1e-13, max_relative = 1e-13);
        }
        assert_relative_eq!(ln_gamma(0.5), 0.5 * PI.ln(), max_relative = 1e-14);
    }

    #[test]
    fn ln_gamma_diff_matches_direct() {
        for &(x, d) in &[(0.3, 2.7), (1.0, 5.0), (7.5, 120.0), (40.0, 0.25), (3.0, 2500.0)] {
            let direct = ln_gamma(x + d) - ln_gamma(x);
            assert_relative_eq!(ln_gamma_diff(x, d), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn beta_ratio_small_cases() {
        // B(3,1)/B(2,1) = (1/3)/(1/2)
        assert_relative_eq!(ln_beta_ratio(2.0, 1.0, 1.0).exp(), 2.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(ln_beta_ratio(3.0, 0.0, 1.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(40, 20), 137_846_528_820.0);
        assert_relative_eq!(binomial(200, 100), 9.054_851_465_610_328e58, max_relative = 1e-12);
    }

    #[test]
    fn bessel_half_order_closed_form() {
        let x = 1.0_f64;
        let expected = (PI / (2.0 * x)).sqrt() * (-x).exp();
        assert_relative_eq!(bessel_k(0.5, x).unwrap(), expected, max_relative = 1e-15);
        assert_relative_eq!(bessel_k(0.5, 1.0).unwrap(), 0.461_068_504, max_relative = 1e-9);
    }

    #[test]
    fn bessel_k1_at_one() {
        assert_relative_eq!(bessel_k(1.0, 1.0).unwrap(), 0.601_907_230_197_234_6, max_relative = 1e-12);
    }

    #[test]
    fn bessel_against_integral_representation() {
        for &nu in &[0.1, 0.37, 0.5, 1.0, 1.5, 2.0, 2.3, 3.7, 5.0] {
            for &x in &[1e-6, 1e-3, 0.05, 0.5, 1.0, 1.99, 2.01, 5.0, 20.0, 80.0, 100.0] {
                let got = bessel_k(nu, x).unwrap();
                let want = bessel_k_integral(nu, x);
                assert_relative_eq!(got, want, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn bessel_asymptotic_envelope() {
        let x = 80.0_f64;
        let ratio = bessel_k(1.0, x).unwrap() / ((PI / (2.0 * x)).sqrt() * (-x).exp());
        assert!((ratio - 1.0).abs() < 0.01);
    }

    #[test]
    fn bessel_rejects_nonpositive_argument() {
        assert!(bessel_k(1.0, 0.0).is_err());
        assert!(bessel_k(1.0, -2.0).is_err());
    }
}
