//! Chi-squared distribution: CDF, survival function and quantiles.
//!
//! The CDF is the regularized lower incomplete gamma function
//! `P(k/2, x/2)`, evaluated with the usual series / continued-fraction split
//! at `x/2 = k/2 + 1`.

use thiserror::Error;

/// Degrees of freedom above this are rejected to bound iteration counts.
pub const MAX_DOF: u32 = 1_000_000;

const TERM_TOLERANCE: f64 = 1e-14;
const MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Chi2Error {
    #[error("chi-squared argument must be non-negative, got {0}")]
    NegativeArgument(f64),
    #[error("probability {0} outside [0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("degrees of freedom {0} outside 1..={MAX_DOF}")]
    InvalidDof(u32),
    #[error("false alarm rate {0} outside (0, 1)")]
    InvalidAlpha(f64),
    #[error("incomplete gamma evaluation did not converge (a = {a}, x = {x})")]
    NoConvergence { a: f64, x: f64 },
}

/// Degrees of freedom and false-alarm rate of a threshold lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chi2Params {
    dof: u32,
    alpha: f64,
}

impl Chi2Params {
    pub fn new(dof: u32, alpha: f64) -> Result<Self, Chi2Error> {
        check_dof(dof)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Chi2Error::InvalidAlpha(alpha));
        }
        Ok(Self { dof, alpha })
    }

    pub fn dof(&self) -> u32 {
        self.dof
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

fn check_dof(dof: u32) -> Result<(), Chi2Error> {
    if dof == 0 || dof > MAX_DOF {
        Err(Chi2Error::InvalidDof(dof))
    } else {
        Ok(())
    }
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, nine coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
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
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete gamma pair `(P(a, x), Q(a, x))`.
fn incomplete_gamma(a: f64, x: f64) -> Result<(f64, f64), Chi2Error> {
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // P = e^{-x} x^a / Γ(a) · Σ x^n / (a (a+1) … (a+n))
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * TERM_TOLERANCE {
                let p = (log_prefactor.exp() * sum).min(1.0);
                return Ok((p, 1.0 - p));
            }
        }
        Err(Chi2Error::NoConvergence { a, x })
    } else {
        // Q by modified Lentz on the Legendre continued fraction.
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
            if (delta - 1.0).abs() < TERM_TOLERANCE {
                let q = (log_prefactor.exp() * h).min(1.0);
                return Ok((1.0 - q, q));
            }
        }
        Err(Chi2Error::NoConvergence { a, x })
    }
}

/// `P(X ≤ x)` for `X ~ χ²(dof)`.
pub fn chi2_cdf(x: f64, dof: u32) -> Result<f64, Chi2Error> {
    check_dof(dof)?;
    if !(x >= 0.0) {
        return Err(Chi2Error::NegativeArgument(x));
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(incomplete_gamma(0.5 * f64::from(dof), 0.5 * x)?.0)
}

/// Right-tail probability `P(X > x)`, accurate deep into the tail.
pub fn chi2_sf(x: f64, dof: u32) -> Result<f64, Chi2Error> {
    check_dof(dof)?;
    if !(x >= 0.0) {
        return Err(Chi2Error::NegativeArgument(x));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(incomplete_gamma(0.5 * f64::from(dof), 0.5 * x)?.1)
}

/// Density of `χ²(dof)` at `x`.
pub fn chi2_pdf(x: f64, dof: u32) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let k = f64::from(dof);
    if x == 0.0 {
        return match dof {
            1 => f64::INFINITY,
            2 => 0.5,
            _ => 0.0,
        };
    }
    ((0.5 * k - 1.0) * x.ln() - 0.5 * x - 0.5 * k * std::f64::consts::LN_2 - ln_gamma(0.5 * k))
        .exp()
}

/// Quantile: the `x` with `chi2_cdf(x, dof) = p`.
pub fn chi2_inv(p: f64, dof: u32) -> Result<f64, Chi2Error> {
    check_dof(dof)?;
    if !(0.0..1.0).contains(&p) {
        return Err(Chi2Error::ProbabilityOutOfRange(p));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    invert(dof, p, false)
}

/// Upper quantile: the `x` with `chi2_sf(x, dof) = q`. Preferred for small
/// `q`, where `1 − q` loses digits.
pub fn chi2_inv_sf(q: f64, dof: u32) -> Result<f64, Chi2Error> {
    check_dof(dof)?;
    if !(q > 0.0 && q <= 1.0) {
        return Err(Chi2Error::ProbabilityOutOfRange(q));
    }
    if q == 1.0 {
        return Ok(0.0);
    }
    invert(dof, q, true)
}

/// Threshold `γ_α` with right-tail probability `alpha`.
pub fn threshold_for(params: Chi2Params) -> Result<f64, Chi2Error> {
    chi2_inv_sf(params.alpha, params.dof)
}

/// Newton iteration on the CDF (or survival function when `upper`), seeded by
/// the Wilson–Hilferty approximation and kept inside a shrinking bracket.
fn invert(dof: u32, target: f64, upper: bool) -> Result<f64, Chi2Error> {
    let k = f64::from(dof);
    let z = if upper {
        -normal_quantile(target)
    } else {
        normal_quantile(target)
    };
    let h = 2.0 / (9.0 * k);
    let mut x = k * (1.0 - h + z * h.sqrt()).powi(3);
    if !(x.is_finite() && x > 0.0) {
        x = k.max(1e-3);
    }

    // residual > 0 means x is too large
    let residual = |x: f64| -> Result<f64, Chi2Error> {
        let (p, q) = incomplete_gamma(0.5 * k, 0.5 * x)?;
        Ok(if upper { target - q } else { p - target })
    };

    let mut lo = 0.0_f64;
    let mut hi = x.max(k) * 2.0 + 10.0;
    while residual(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
    }

    for _ in 0..200 {
        let f = residual(x)?;
        if f == 0.0 {
            return Ok(x);
        }
        if f > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let slope = chi2_pdf(x, dof);
        let mut next = x - f / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Standard normal quantile, Acklam's rational approximation (about 1e-9
/// relative). Only used to seed the chi-squared inversion.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
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
    let p_low = 0.024_25;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
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
