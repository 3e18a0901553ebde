//! Modified Bessel function of the second kind for real order, via Temme's
//! series for small arguments and Steed's continued fraction otherwise,
//! followed by upward recurrence in the order.

use std::f64::consts::PI;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const SERIES_LIMIT: f64 = 2.0;

/// Taylor coefficients of `1/Γ(1+x)` around 0.
const RGAMMA: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_2,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_3,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_7,
    -0.000_001_250_493_482_1,
    0.000_001_133_027_232_0,
    -0.000_000_205_633_841_7,
    0.000_000_006_116_095_0,
    0.000_000_005_002_007_5,
    -0.000_000_001_181_274_6,
    0.000_000_000_104_342_7,
    0.000_000_000_007_782_3,
    -0.000_000_000_003_696_8,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_020_6,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_001_4,
    0.000_000_000_000_000_1,
];

/// Returns `(1/Γ(1+μ), 1/Γ(1-μ), Γ₁(μ), Γ₂(μ))` for `|μ| <= 1/2`, where
/// `Γ₁ = (1/Γ(1-μ) - 1/Γ(1+μ)) / 2μ` and `Γ₂ = (1/Γ(1-μ) + 1/Γ(1+μ)) / 2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let mut even = 0.0;
    let mut odd = 0.0;
    let mu2 = mu * mu;
    // even part: Σ a_{2k} μ^{2k}; odd part divided by μ: Σ a_{2k+1} μ^{2k}
    for k in (0..RGAMMA.len() / 2).rev() {
        even = even * mu2 + RGAMMA[2 * k];
        odd = odd * mu2 + RGAMMA[2 * k + 1];
    }
    let plus = even + mu * odd;
    let minus = even - mu * odd;
    (plus, minus, -odd, even)
}

/// `(K_μ(x), K_{μ+1}(x))` for `|μ| <= 1/2`, `x > 0`.
fn bessel_k_pair(mu: f64, x: f64) -> (f64, f64) {
    let mu2 = mu * mu;
    if x < SERIES_LIMIT {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gampl, gammi, gam1, gam2) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum, sum1 * 2.0 / x)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        let h = a1 * h;
        let kmu = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        let k1 = kmu * (mu + x + 0.5 - h) / x;
        (kmu, k1)
    }
}

/// Modified Bessel function of the second kind `K_ν(x)` for `ν >= 0`, `x > 0`.
/// Returns `+∞` at `x = 0` and `0` once the value underflows.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    debug_assert!(nu >= 0.0);
    if x == 0.0 {
        return f64::INFINITY;
    }
    if x > 705.0 {
        return 0.0;
    }
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    let (mut kmu, mut k1) = bessel_k_pair(mu, x);
    for i in 1..=nl {
        let next = (mu + i as f64) * (2.0 / x) * k1 + kmu;
        kmu = k1;
        k1 = next;
    }
    kmu
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    let x = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // one Newton polish against the accurate CDF
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf > 0.0 {
        x - (normal_cdf(x) - p) / pdf
    } else {
        x
    }
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// K_ν(x) = ∫₀^∞ exp(-x cosh t) cosh(ν t) dt by composite Simpson.
    fn bessel_k_quadrature(nu: f64, x: f64) -> f64 {
        let upper = ((50.0 / x) + 1.0).ln().max(1.0) * 2.0 + 5.0;
        let n = 200_000;
        let h = upper / n as f64;
        let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
        let mut s = f(0.0) + f(upper);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        s * h / 3.0
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn half_order_closed_form() {
        for &x in &[1e-4, 0.01, 0.3, 1.0, 1.9999, 2.0, 3.7, 10.0, 50.0, 300.0] {
            let exact = (PI / (2.0 * x)).sqrt() * (-x).exp();
            assert!(rel(bessel_k(0.5, x), exact) < 1e-13, "x = {x}");
            let exact15 = exact * (1.0 + 1.0 / x);
            assert!(rel(bessel_k(1.5, x), exact15) < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn tabulated_values() {
        // Abramowitz & Stegun table 9.8 (scaled back) / standard references
        assert!(rel(bessel_k(0.0, 1.0), 0.421_024_438_240_708_3) < 1e-13);
        assert!(rel(bessel_k(1.0, 1.0), 0.601_907_230_197_234_6) < 1e-13);
        assert!(rel(bessel_k(0.0, 0.1), 2.427_069_024_702_017) < 1e-13);
        assert!(rel(bessel_k(1.0, 2.0), 0.139_865_881_816_522_4) < 1e-13);
        assert!(rel(bessel_k(0.0, 5.0), 0.003_691_098_334_042_594) < 1e-12);
    }

    #[test]
    fn matches_integral_representation() {
        for &nu in &[0.05, 0.25, 0.5, 0.7, 0.95, 1.0] {
            for &x in &[0.05, 0.5, 1.5, 2.5, 8.0] {
                let q = bessel_k_quadrature(nu, x);
                assert!(rel(bessel_k(nu, x), q) < 1e-8, "nu = {nu}, x = {x}");
            }
        }
    }

    #[test]
    fn continuity_across_method_switch() {
        for &nu in &[0.1, 0.5, 0.9] {
            let a = bessel_k(nu, SERIES_LIMIT * (1.0 - 1e-12));
            let b = bessel_k(nu, SERIES_LIMIT);
            assert!(rel(a, b) < 1e-10);
        }
    }

    #[test]
    fn normal_helpers() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        let c = normal_cdf(1.959_963_984_540_054);
        assert!((c - 0.975).abs() < 1e-12, "{c}");
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
    }
}
