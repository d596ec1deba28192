//! Classical entropically regularized optimal transport between two fixed
//! discrete marginals, solved with log-domain Sinkhorn iterations.
//!
//! The plan has the form `gamma_ij = c_i exp(-C_ij / eps) d_j`. Only the
//! logarithms of the scalings are stored, so `eps` can be several orders of
//! magnitude below the cost scale without under- or overflow.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{column_lse, row_lse};

/// Result of a Sinkhorn run.
#[derive(Debug, Clone)]
pub struct SinkhornPlan {
    /// `log c`, length `m`.
    pub log_c: Vec<f64>,
    /// `log d`, length `n`.
    pub log_d: Vec<f64>,
    /// `-C / eps`.
    pub gibbs_log: DMatrix<f64>,
    pub epsilon: f64,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub iterations: usize,
    /// `|| gamma^T 1 - nu ||_1` after the last update.
    pub residual: f64,
}

impl SinkhornPlan {
    /// `log gamma_ij`.
    pub fn log_entry(&self, i: usize, j: usize) -> f64 {
        self.log_c[i] + self.gibbs_log[(i, j)] + self.log_d[j]
    }

    /// Dense coupling matrix.
    pub fn plan(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.log_c.len(), self.log_d.len(), |i, j| self.log_entry(i, j).exp())
    }

    pub fn scaling_c(&self) -> Vec<f64> {
        self.log_c.iter().map(|v| v.exp()).collect()
    }

    pub fn scaling_d(&self) -> Vec<f64> {
        self.log_d.iter().map(|v| v.exp()).collect()
    }
}

fn check_marginal(name: &'static str, w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::param(name, "empty marginal"));
    }
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::param(name, "entries must be finite and nonnegative"));
    }
    Ok(())
}

/// Runs exactly `iters` Sinkhorn sweeps from zero log-potentials.
pub fn sinkhorn(mu: &[f64], nu: &[f64], cost: &DMatrix<f64>, epsilon: f64, iters: usize) -> Result<SinkhornPlan> {
    sinkhorn_until(mu, nu, cost, epsilon, iters, None)
}

/// Like [`sinkhorn`], stopping early once the second-marginal residual drops
/// to `tol` or below.
///
/// One sweep updates `d` (second marginal) and then `c` (first marginal), so
/// the first marginal is exact after every sweep and the residual measures
/// the second.
pub fn sinkhorn_until(
    mu: &[f64],
    nu: &[f64],
    cost: &DMatrix<f64>,
    epsilon: f64,
    max_iters: usize,
    tol: Option<f64>,
) -> Result<SinkhornPlan> {
    check_marginal("mu", mu)?;
    check_marginal("nu", nu)?;
    if cost.nrows() != mu.len() || cost.ncols() != nu.len() {
        return Err(Error::DimensionMismatch {
            context: "sinkhorn cost",
            expected: mu.len() * nu.len(),
            found: cost.nrows() * cost.ncols(),
        });
    }
    if cost.iter().any(|c| c.is_nan()) {
        return Err(Error::param("cost", "contains NaN"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("must be positive, got {epsilon}")));
    }
    if max_iters == 0 {
        return Err(Error::param("iters", "must be at least 1"));
    }

    let gibbs_log = cost.map(|c| -c / epsilon);
    let log_mu: Vec<f64> = mu.iter().map(|x| x.ln()).collect();
    let log_nu: Vec<f64> = nu.iter().map(|x| x.ln()).collect();
    let (m, n) = (mu.len(), nu.len());
    let mut log_c = vec![0.0; m];
    let mut log_d = vec![0.0; n];
    let mut col = vec![0.0; n];
    let mut row = vec![0.0; m];

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iters {
        column_lse(&gibbs_log, &log_c, &mut col);
        if iterations > 0 {
            residual = marginal_residual(&col, &log_d, nu);
            if tol.is_some_and(|t| residual <= t) {
                break;
            }
        }
        for j in 0..n {
            log_d[j] = log_nu[j] - col[j];
        }
        row_lse(&gibbs_log, &log_d, &mut row);
        for i in 0..m {
            log_c[i] = if mu[i] > 0.0 { log_mu[i] - row[i] } else { f64::NEG_INFINITY };
        }
        iterations += 1;
    }
    if iterations == max_iters {
        column_lse(&gibbs_log, &log_c, &mut col);
        residual = marginal_residual(&col, &log_d, nu);
    }
    if log_c.iter().chain(&log_d).any(|v| v.is_nan() || *v == f64::INFINITY) {
        let (min, max) = range(log_c.iter().chain(&log_d));
        return Err(Error::Overflow {
            block: "sinkhorn scalings",
            min,
            max,
        });
    }

    Ok(SinkhornPlan {
        log_c,
        log_d,
        gibbs_log,
        epsilon,
        mu: mu.to_vec(),
        nu: nu.to_vec(),
        iterations,
        residual,
    })
}

fn marginal_residual(col_lse: &[f64], log_d: &[f64], nu: &[f64]) -> f64 {
    col_lse
        .iter()
        .zip(log_d)
        .zip(nu)
        .map(|((s, d), v)| ((s + d).exp() - v).abs())
        .sum()
}

pub(crate) fn range<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

/// `<gamma, C> + eps * KL(gamma | mu (x) nu)` for the plan's coupling, using
/// the generalized KL with mass terms.
pub fn entropic_cost(plan: &SinkhornPlan, cost: &DMatrix<f64>) -> f64 {
    let (m, n) = (plan.log_c.len(), plan.log_d.len());
    let mut linear = 0.0;
    let mut kl = 0.0;
    for j in 0..n {
        for i in 0..m {
            let reference = plan.mu[i] * plan.nu[j];
            let lg = plan.log_entry(i, j);
            let g = lg.exp();
            linear += g * cost[(i, j)];
            if g > 0.0 {
                kl += g * (lg - plan.mu[i].ln() - plan.nu[j].ln()) - g + reference;
            } else {
                kl += reference;
            }
        }
    }
    linear + plan.epsilon * kl
}
