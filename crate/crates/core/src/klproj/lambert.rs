//! Principal branch of the Lambert W function on the nonnegative axis, and
//! its log-argument form `W(exp(a))` (the Wright omega function) used by the
//! Douglas-Rachford proximal step.

use crate::error::{Error, Result};

const REL_TOL: f64 = 1e-15;
const MAX_STEPS: usize = 50;

/// `W(x)` for `x >= 0`: the `w >= 0` with `w e^w = x`.
///
/// Halley iteration on `w e^w - x` started from `log(1 + x)`.
pub fn lambert_w(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::param("x", format!("lambert_w needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if x > 1e300 {
        // w e^w overflows before the iteration can settle; go through logs.
        return Ok(lambert_w_exp(x.ln()));
    }
    let mut w = x.ln_1p();
    for _ in 0..MAX_STEPS {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= REL_TOL * w.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(w)
}

/// `W(exp(a))` for any real `a`, without forming `exp(a)`.
///
/// Solves `w + ln w = a` with Halley steps. For `a` below the underflow
/// threshold the answer equals `exp(a)` to machine precision.
pub fn lambert_w_exp(a: f64) -> f64 {
    if a.is_nan() {
        return f64::NAN;
    }
    if a == f64::INFINITY {
        return f64::INFINITY;
    }
    if a < -40.0 {
        // w = e^{a - w} and w < e^{-40}, so e^{-w} = 1 to double precision.
        return a.exp();
    }
    let mut w = if a > 1.0 { a - a.ln() } else { a.exp().ln_1p() };
    for _ in 0..MAX_STEPS {
        let f = w + w.ln() - a;
        let fp = 1.0 + 1.0 / w;
        let fpp = -1.0 / (w * w);
        let step = f / (fp - 0.5 * f * fpp / fp);
        let next = w - step;
        // Halley can overshoot below zero from a poor start; bisect toward 0.
        w = if next > 0.0 { next } else { 0.5 * w };
        if step.abs() <= REL_TOL * w {
            break;
        }
    }
    w
}
