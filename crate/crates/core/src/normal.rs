//! Standard normal distribution function and its inverse.
//!
//! `norm_cdf` evaluates the error function with a positive-term power series
//! near the origin and a Lentz continued fraction for the complementary error
//! function in the tails, so both `Φ(x)` and `1 - Φ(x)` keep full relative
//! precision. `inv_norm_cdf` starts from a rational approximation and polishes
//! with Halley steps on that `Φ`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("probability {0} outside the open interval (0, 1)")]
pub struct OutOfDomain(pub f64);

const SERIES_CUTOFF: f64 = 2.0;

/// `erf(z)` for `0 <= z`, via `2/sqrt(pi) e^{-z^2} sum 2^n z^{2n+1} / (2n+1)!!`.
fn erf_series(z: f64) -> f64 {
    let z2 = z * z;
    let mut term = z;
    let mut sum = z;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= 2.0 * z2 / (2.0 * k + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    2.0 / PI.sqrt() * (-z2).exp() * sum
}

/// `erfc(z)` for `z >= SERIES_CUTOFF`, modified Lentz on
/// `erfc(z) = e^{-z^2}/sqrt(pi) * 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))`.
fn erfc_continued_fraction(z: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = z;
    let mut c = z;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = z + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = z + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-z * z).exp() / (PI.sqrt() * f)
}

/// Complementary error function for `z >= 0`.
fn erfc_nonneg(z: f64) -> f64 {
    if z < SERIES_CUTOFF {
        1.0 - erf_series(z)
    } else {
        erfc_continued_fraction(z)
    }
}

/// Standard normal cumulative distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let z = x.abs() * FRAC_1_SQRT_2;
    let tail = 0.5 * erfc_nonneg(z);
    if x < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Rational initial guess (Acklam), relative error about 1e-9.
fn initial_guess(p: f64) -> f64 {
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
    const D: [f64; 4] =
        [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
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

/// Inverse of the standard normal distribution function.
pub fn inv_norm_cdf(p: f64) -> Result<f64, OutOfDomain> {
    if !(p > 0.0 && p < 1.0) {
        return Err(OutOfDomain(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Work in the lower tail so the residual keeps relative precision
    // (`1 - p` is exact for p in [0.5, 1)).
    let (target, sign) = if p < 0.5 { (p, 1.0) } else { (1.0 - p, -1.0) };
    let mut x = initial_guess(target).min(0.0);
    for _ in 0..8 {
        let err = norm_cdf(x) - target;
        let pdf = norm_pdf(x);
        if pdf == 0.0 {
            break;
        }
        let u = err / pdf;
        let step = u / (1.0 + 0.5 * x * u);
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(sign * x)
}

/// `Φ^{-1}(1 - p)` for a small tail probability `p`.
pub fn upper_quantile(p: f64) -> Result<f64, OutOfDomain> {
    inv_norm_cdf(p).map(|x| -x)
}

#[cfg(test)]
fn erf(x: f64) -> f64 {
    let z = x.abs();
    let v = if z < SERIES_CUTOFF { erf_series(z) } else { 1.0 - erfc_continued_fraction(z) };
    v.copysign(x)
}
