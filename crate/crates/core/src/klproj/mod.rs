//! KL (Bregman) projection of a positive vector onto `ker B`, where
//! `B = [Id_m, -R]`, by Douglas-Rachford splitting.
//!
//! With `f = KL(. | w)` and `g` the indicator of `ker B`, one step reads
//!
//! ```text
//! y = P x                                   (orthogonal projection)
//! z = tau * W((w / tau) * exp((2y - x) / tau))
//! x = x + z - y
//! ```
//!
//! started from `x = w`. The Lambert W argument is formed in log space, so
//! `w` itself may be passed as logarithms and entries far below the
//! smallest double are handled exactly.
//!
//! The iteration's convergence speed depends on `tau` relative to the size
//! of the entries of `w`: with `tau` much smaller than the entries it barely
//! moves along `ker B`. The default `tau = 1e-3` suits probability vectors
//! with a few hundred or more entries.

mod lambert;
mod projector;

pub use lambert::{lambert_w, lambert_w_exp};
pub use projector::ConstraintOperator;

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 1e-3;
pub const DEFAULT_DR_ITERS: usize = 25;
/// Linear-scale outputs are floored here before they re-enter divisions.
pub const OUTPUT_FLOOR: f64 = 1e-300;

/// Douglas-Rachford iterate for one projection.
#[derive(Debug, Clone)]
pub struct DrState {
    /// Governing sequence `x^n`.
    pub x: Vec<f64>,
    /// `log w` for the point being projected.
    pub log_w: Vec<f64>,
    pub tau: f64,
    /// Last proximal output `z^n`, in log coordinates.
    pub log_z: Vec<f64>,
    y: Vec<f64>,
    coef: Vec<f64>,
}

impl DrState {
    pub fn new(log_w: Vec<f64>, tau: f64, op: &ConstraintOperator) -> Result<Self> {
        if log_w.len() != op.len() {
            return Err(Error::DimensionMismatch {
                context: "kl projection input",
                expected: op.len(),
                found: log_w.len(),
            });
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::param("tau", format!("must be positive, got {tau}")));
        }
        if let Some(i) = log_w.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "w",
                format!("entry {i} must be strictly positive and finite (log = {})", log_w[i]),
            ));
        }
        let x = log_w.iter().map(|v| v.exp()).collect();
        Ok(Self {
            x,
            log_z: log_w.clone(),
            log_w,
            tau,
            y: vec![0.0; op.len()],
            coef: vec![0.0; op.l()],
        })
    }

    pub fn step(&mut self, op: &ConstraintOperator) {
        op.project_into(&self.x, &mut self.y, &mut self.coef);
        let log_tau = self.tau.ln();
        for r in 0..self.x.len() {
            let a = self.log_w[r] - log_tau + (2.0 * self.y[r] - self.x[r]) / self.tau;
            let omega = lambert_w_exp(a);
            // log(tau * omega) with log(omega) = a - omega
            self.log_z[r] = log_tau + a - omega;
            self.x[r] += self.tau * omega - self.y[r];
        }
    }

    /// Current proximal output `z^n` in linear scale.
    pub fn z(&self) -> Vec<f64> {
        self.log_z.iter().map(|v| v.exp()).collect()
    }
}

/// Projection result in linear coordinates.
#[derive(Debug, Clone)]
pub struct KlProjection {
    pub point: Vec<f64>,
    /// `||B point||_inf`.
    pub residual: f64,
}

/// Projection result in log coordinates.
#[derive(Debug, Clone)]
pub struct LogKlProjection {
    pub log_point: Vec<f64>,
    /// `||B exp(log_point)||_inf`.
    pub residual: f64,
}

/// Approximates `argmin_{x in ker B} KL(x | w)` with `iters` DR steps.
/// `w` must be strictly positive. Entries of the result below
/// [`OUTPUT_FLOOR`] are raised to it.
pub fn kl_project_ker(op: &ConstraintOperator, w: &[f64], tau: f64, iters: usize) -> Result<KlProjection> {
    if let Some(i) = w.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::param("w", format!("entry {i} = {} is not strictly positive", w[i])));
    }
    let log_w = w.iter().map(|v| v.ln()).collect();
    let proj = kl_project_ker_log(op, log_w, tau, iters)?;
    let point: Vec<f64> = proj.log_point.iter().map(|v| v.exp().max(OUTPUT_FLOOR)).collect();
    let residual = op.residual(&point)?;
    Ok(KlProjection { point, residual })
}

/// Log-coordinate version of [`kl_project_ker`]: takes `log w`, returns
/// `log` of the projection. No flooring is needed.
pub fn kl_project_ker_log(op: &ConstraintOperator, log_w: Vec<f64>, tau: f64, iters: usize) -> Result<LogKlProjection> {
    if iters == 0 {
        return Err(Error::param("iters", "must be at least 1"));
    }
    let mut state = DrState::new(log_w, tau, op)?;
    for _ in 0..iters {
        state.step(op);
    }
    let residual = op.residual(&state.z())?;
    Ok(LogKlProjection {
        log_point: state.log_z,
        residual,
    })
}

/// Generalized KL divergence `sum x log(x/w) - x + w`.
pub fn kl_divergence(x: &[f64], w: &[f64]) -> f64 {
    x.iter()
        .zip(w)
        .map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() - a + b } else { b })
        .sum()
}
