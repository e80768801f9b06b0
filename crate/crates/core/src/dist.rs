//! Distribution functions used by the tests and the tuning rule: standard
//! normal, central chi-square and noncentral chi-square.
//!
//! Everything rests on the regularized incomplete gamma function, evaluated
//! by its power series below `x = a + 1` and by a Lentz continued fraction
//! above.

use crate::error::{Error, Result};

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_continued_fraction(a, x)
    }
}

/// Standard normal distribution function `Φ(z)`.
pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let half_tail = 0.5 * gamma_q(0.5, 0.5 * z * z);
    if z < 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

/// Upper tail `1 - Φ(z)` without cancellation.
pub fn normal_sf(z: f64) -> f64 {
    normal_cdf(-z)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Acklam's rational approximation, refined below.
fn normal_quantile_initial(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let low = 0.02425;
    if p < low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Standard normal quantile `Φ⁻¹(p)` for `p ∈ (0, 1)`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile requires p in (0,1), got {p}"
        )));
    }
    let mut x = normal_quantile_initial(p);
    for _ in 0..3 {
        let e = if p < 0.5 {
            normal_cdf(x) - p
        } else {
            (1.0 - p) - normal_sf(x)
        };
        let u = e / normal_pdf(x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

fn check_df(r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!(
            "degrees of freedom must be positive, got {r}"
        )));
    }
    Ok(())
}

/// Central chi-square distribution function.
pub fn chisq_cdf(x: f64, r: f64) -> Result<f64> {
    check_df(r)?;
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!("chi-square cdf needs x >= 0, got {x}")));
    }
    Ok(gamma_p(0.5 * r, 0.5 * x))
}

/// Central chi-square survival function `1 - F(x)`.
pub fn chisq_sf(x: f64, r: f64) -> Result<f64> {
    check_df(r)?;
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!("chi-square sf needs x >= 0, got {x}")));
    }
    Ok(gamma_q(0.5 * r, 0.5 * x))
}

fn chisq_pdf(x: f64, r: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = 0.5 * r;
    ((a - 1.0) * x.ln() - 0.5 * x - a * std::f64::consts::LN_2 - ln_gamma(a)).exp()
}

/// Central chi-square quantile for `p ∈ (0, 1)`.
pub fn chisq_quantile(p: f64, r: f64) -> Result<f64> {
    check_df(r)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "chi-square quantile requires p in (0,1), got {p}"
        )));
    }
    // Residual measured on whichever tail is smaller.
    let residual = |x: f64| {
        if p < 0.5 {
            gamma_p(0.5 * r, 0.5 * x) - p
        } else {
            (1.0 - p) - gamma_q(0.5 * r, 0.5 * x)
        }
    };
    let z = normal_quantile(p)?;
    let h = 2.0 / (9.0 * r);
    let mut x = (r * (1.0 - h + z * h.sqrt()).powi(3)).max(1e-8);

    let mut lo = 0.0;
    let mut hi = x.max(1.0);
    while residual(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    if x <= lo || x >= hi {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let f = residual(x);
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = chisq_pdf(x, r);
        let mut next = if pdf > 0.0 { x - f / pdf } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Noncentral chi-square distribution function with the default Poisson
/// tail tolerance of `1e-14`.
pub fn noncentral_chisq_cdf(x: f64, r: f64, delta: f64) -> Result<f64> {
    noncentral_chisq_cdf_with_tolerance(x, r, delta, 1e-14)
}

/// Upper tail of the noncentral chi-square.
pub fn noncentral_chisq_sf(x: f64, r: f64, delta: f64) -> Result<f64> {
    noncentral_mixture(x, r, delta, 1e-14, gamma_q)
}

/// Poisson-mixture series `Σ_m e^{-δ/2}(δ/2)^m/m! · F_{r+2m}(x)`, summed
/// outward from the Poisson mode until the neglected weight falls below
/// `tail_tol`.
pub fn noncentral_chisq_cdf_with_tolerance(x: f64, r: f64, delta: f64, tail_tol: f64) -> Result<f64> {
    noncentral_mixture(x, r, delta, tail_tol, gamma_p)
}

fn noncentral_mixture(
    x: f64,
    r: f64,
    delta: f64,
    tail_tol: f64,
    component: fn(f64, f64) -> f64,
) -> Result<f64> {
    check_df(r)?;
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!(
            "noncentral chi-square needs x >= 0, got {x}"
        )));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!(
            "noncentrality must be finite and nonnegative, got {delta}"
        )));
    }
    if !(tail_tol > 0.0) {
        return Err(Error::Domain("tail tolerance must be positive".into()));
    }
    let half_x = 0.5 * x;
    let mean = 0.5 * delta;
    if mean == 0.0 {
        return Ok(component(0.5 * r, half_x));
    }
    let weight = |m: f64| (-mean + m * mean.ln() - ln_gamma(m + 1.0)).exp();
    let mode = mean.floor();

    let mut total = 0.0;
    let mut used = 0.0;
    let mut m = mode;
    loop {
        let w = weight(m);
        total += w * component(0.5 * r + m, half_x);
        used += w;
        // Beyond the mode the weights decay at least geometrically with
        // ratio mean/(m+1), which bounds the neglected tail.
        let ratio = mean / (m + 1.0);
        if ratio < 1.0 && w * ratio / (1.0 - ratio) < tail_tol {
            break;
        }
        m += 1.0;
        if m > mode + 1e7 {
            break;
        }
    }
    let mut m = mode - 1.0;
    while m >= 0.0 {
        let w = weight(m);
        total += w * component(0.5 * r + m, half_x);
        used += w;
        if w < tail_tol * 1e-3 {
            break;
        }
        m -= 1.0;
    }
    debug_assert!(used <= 1.0 + 1e-9);
    Ok(total.clamp(0.0, 1.0))
}
