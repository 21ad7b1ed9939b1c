//! Standard-normal primitives, the Stein equation, and the computable
//! moderate-deviation / MGF bound envelopes.
//!
//! The normal tail is computed through a complementary-error-function
//! split: a positive-term series below `|x| = 1` and a Lentz continued
//! fraction above, with a hi/lo argument split for `exp(-x^2)` so the
//! relative accuracy stays near 1e-15 across `|x| <= 8`. The survival
//! function is computed directly, never as `1 - cdf`.
//!
//! Envelope formulas are verbatim transcriptions of the bound right-hand
//! sides; the unnamed multiplicative constants are configuration, never
//! silently fixed.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const FRAC_1_SQRT_PI: f64 = 0.5641895835477562869480794515607726;
const SQRT_2PI: f64 = 2.5066282746310005024157652848110453;

/// `exp(-x*x)` with the argument split into exact high bits plus a
/// correction, avoiding the x^2 rounding amplification.
fn exp_neg_sq(x: f64) -> f64 {
    let hx = f64::from_bits(x.to_bits() & 0xffff_ffff_0000_0000);
    (-hx * hx).exp() * ((hx - x) * (hx + x)).exp()
}

/// Complementary error function, positive arguments.
fn erfc_pos(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 1.0 {
        // erf(x) = (2/sqrt(pi)) e^{-x^2} sum_{m>=0} (2x^2)^m x / (2m+1)!!
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut m = 0u32;
        loop {
            m += 1;
            term *= 2.0 * x2 / (2 * m + 1) as f64;
            let new = sum + term;
            if new == sum {
                break;
            }
            sum = new;
            if m > 200 {
                break;
            }
        }
        1.0 - 2.0 * FRAC_1_SQRT_PI * exp_neg_sq(x) * sum
    } else if x > 27.5 {
        // below the smallest positive normal double
        0.0
    } else {
        // sqrt(pi) e^{x^2} erfc(x) = 1/g with
        // g = x + (1/2)/(x + (2/2)/(x + (3/2)/(x + ...))),
        // evaluated by the modified Lentz algorithm
        let tiny = 1e-300;
        let mut f = x;
        let mut c = x;
        let mut d = 0.0f64;
        for j in 1..=500u32 {
            let a = j as f64 / 2.0;
            d = x + a * d;
            if d == 0.0 {
                d = tiny;
            }
            c = x + a / c;
            if c == 0.0 {
                c = tiny;
            }
            d = 1.0 / d;
            let ratio = c * d;
            f *= ratio;
            if (ratio - 1.0).abs() < 2e-16 {
                break;
            }
        }
        FRAC_1_SQRT_PI * exp_neg_sq(x) / f
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        erfc_pos(x)
    } else {
        2.0 - erfc_pos(-x)
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    exp_neg_sq(x / std::f64::consts::SQRT_2) / SQRT_2PI
}

/// Standard normal distribution function `Phi(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal survival function `1 - Phi(x)`, computed directly.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Solution of the Stein equation for the indicator test function:
/// `f_z(w) = Phi(w)(1-Phi(z))/p(w)` for `w <= z`, else
/// `Phi(z)(1-Phi(w))/p(w)`.
pub fn stein_solution(w: f64, z: f64) -> f64 {
    let p = normal_pdf(w);
    if w <= z {
        normal_cdf(w) * normal_sf(z) / p
    } else {
        normal_cdf(z) * normal_sf(w) / p
    }
}

/// Residual of the Stein equation `f'(w) - w f(w) = 1{w<=z} - Phi(z)`
/// with `f'` replaced by a central finite difference of step `h`.
/// Refuses `w` within `h` of the indicator jump at `z`.
pub fn stein_residual(w: f64, z: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) || !w.is_finite() || !z.is_finite() {
        return Err(Error::ArgumentOutOfRange("stein_residual inputs".into()));
    }
    if (w - z).abs() <= h {
        return Err(Error::ArgumentOutOfRange(format!(
            "w = {} within step {} of the kink at z = {}",
            w, h, z
        )));
    }
    let fd = (stein_solution(w + h, z) - stein_solution(w - h, z)) / (2.0 * h);
    let indicator = if w <= z { 1.0 } else { 0.0 };
    let rhs = w * stein_solution(w, z) + indicator - normal_cdf(z);
    Ok((fd - rhs).abs())
}

/// Parameters of the moderate-deviation envelopes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnvelopeParams {
    pub n: usize,
    /// Boundedness scale `delta`.
    pub delta: f64,
    /// Exponent budget `theta > 0`.
    pub theta: f64,
    /// The unnamed constant in the tail bound; default 1, reported with
    /// every envelope value.
    pub c1: f64,
    /// The unnamed constant inside the `delta_1(t)` envelope.
    pub delta1_c: f64,
}

impl EnvelopeParams {
    pub fn new(n: usize, delta: f64, theta: f64) -> Result<Self> {
        let p = EnvelopeParams {
            n,
            delta,
            theta,
            c1: 1.0,
            delta1_c: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !(self.theta > 0.0) || !(self.c1 > 0.0) || !(self.delta1_c > 0.0)
        {
            return Err(Error::ArgumentOutOfRange(
                "envelope params need delta, theta, c1, delta1_c > 0".into(),
            ));
        }
        if self.n < 1 {
            return Err(Error::ArgumentOutOfRange("envelope params need n >= 1".into()));
        }
        Ok(())
    }
}

/// Largest `t` in `[0, hi]` with `lhs(t) <= theta`, for nondecreasing
/// `lhs`, by bisection to absolute tolerance 1e-10.
fn bisect_max(hi: f64, theta: f64, lhs: impl Fn(f64) -> f64) -> f64 {
    if lhs(hi) <= theta {
        return hi;
    }
    let mut lo = 0.0f64;
    let mut hi = hi;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if lhs(mid) <= theta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `tau(theta) = max{0 <= t <= 1/delta :
/// t^3 delta + sqrt(n) delta^3 t^2 + n delta^3 t^3 + t delta + t^2/n <= theta}`.
pub fn tau_theta(params: &EnvelopeParams) -> Result<f64> {
    params.validate()?;
    let n = params.n as f64;
    let d = params.delta;
    let lhs = move |t: f64| {
        t.powi(3) * d + n.sqrt() * d.powi(3) * t * t + n * d.powi(3) * t.powi(3) + t * d
            + t * t / n
    };
    Ok(bisect_max(1.0 / d, params.theta, lhs))
}

/// `tau_0(theta) = max{0 <= t <= min(tau, 1/delta) :
/// t^2 (t delta + 2 delta_1(t))/2 + 3 t delta_2(t) <= theta}`,
/// for nondecreasing `delta_1`, `delta_2` (caller contract).
pub fn tau0_theta(
    tau: f64,
    delta: f64,
    delta1: impl Fn(f64) -> f64,
    delta2: impl Fn(f64) -> f64,
    theta: f64,
) -> Result<f64> {
    if !(delta > 0.0) || !(theta > 0.0) || !(tau >= 0.0) {
        return Err(Error::ArgumentOutOfRange(
            "tau0 needs delta > 0, theta > 0, tau >= 0".into(),
        ));
    }
    let hi = tau.min(1.0 / delta);
    let lhs = |t: f64| t * t * (t * delta + 2.0 * delta1(t)) / 2.0 + 3.0 * t * delta2(t);
    Ok(bisect_max(hi, theta, lhs))
}

/// Tail-ratio envelope
/// `C_1 e^theta (1+z^2)(sqrt(n) delta^2 + n delta^3 + n delta^3 z + delta)`,
/// valid for `0 <= z <= tau(theta)`.
pub fn md_bound_envelope(params: &EnvelopeParams, z: f64) -> Result<f64> {
    params.validate()?;
    let tau = tau_theta(params)?;
    if !(0.0..=tau).contains(&z) {
        return Err(Error::ArgumentOutOfRange(format!(
            "z = {} outside [0, tau(theta) = {}]",
            z, tau
        )));
    }
    let n = params.n as f64;
    let d = params.delta;
    Ok(params.c1
        * params.theta.exp()
        * (1.0 + z * z)
        * (n.sqrt() * d * d + n * d.powi(3) + n * d.powi(3) * z + d))
}

/// General bounded-exchangeable-pair tail envelope
/// `31 e^theta (1+9 delta) {(1+z^2)[delta_1(z) + delta + delta delta_2(z)]
/// + (1+z) delta_2(z)}`.
pub fn exchangeable_pair_tail_bound(z: f64, delta: f64, delta1_at_z: f64, delta2_at_z: f64, theta: f64) -> f64 {
    31.0 * theta.exp()
        * (1.0 + 9.0 * delta)
        * ((1.0 + z * z) * (delta1_at_z + delta + delta * delta2_at_z)
            + (1.0 + z) * delta2_at_z)
}

/// MGF envelope
/// `(1+9 delta) exp(t^2/2 (1 + t delta + 2 delta_1(t)) + 3 t delta_2(t))`,
/// valid for `0 <= t <= min(tau, 1/delta)` (caller contract).
pub fn mgf_envelope(t: f64, delta: f64, delta1_at_t: f64, delta2_at_t: f64) -> f64 {
    (1.0 + 9.0 * delta)
        * (t * t / 2.0 * (1.0 + t * delta + 2.0 * delta1_at_t) + 3.0 * t * delta2_at_t).exp()
}

/// The permutation-statistic envelope functions:
/// `delta_1(t) = c (sqrt(n) delta^2 + n delta^3 + n delta^3 t + 1/sqrt(n))`
/// and the constant `delta_2 = sqrt(6) delta`. Both nondecreasing.
pub fn application_deltas(n: usize, delta: f64, c: f64) -> (impl Fn(f64) -> f64, f64) {
    let nf = n as f64;
    let delta1 = move |t: f64| {
        c * (nf.sqrt() * delta * delta + nf * delta.powi(3) + nf * delta.powi(3) * t
            + 1.0 / nf.sqrt())
    };
    let delta2 = 6.0f64.sqrt() * delta;
    (delta1, delta2)
}
