//! Generalized Sinkhorn solver for the discrete entropic unfolding problem.
//!
//! The unknowns `(Gamma, sigma)` are stacked into one `(m+L) x (n+1)` matrix
//!
//! ```text
//! P = [ Gamma  0     ]      K~ = [ exp(-C/eps)  0 ]      b = [nu; 1]
//!     [ 0      sigma ]           [ 0            1 ]
//! ```
//!
//! and the problem becomes `min eps KL(P | K~)` over matrices whose row sums
//! lie in `ker [Id_m, -R]` and whose column sums equal `b`. Alternating KL
//! projections onto the two constraint sets reduce to updates of two
//! scaling vectors `u` (length `m+L`) and `v` (length `n+1`) with
//! `P = diag(u) K~ diag(v)`:
//!
//! ```text
//! u <- Proj_kerB(u * K~v) / K~v
//! v <- b / K~^T u
//! ```
//!
//! Everything is carried in log coordinates. The forbidden blocks of `K~`
//! are never materialized, so they stay exactly zero.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::entropic_ot::{range, sinkhorn_until};
use crate::error::{Error, Result};
use crate::eval::{transport_cost, MetricBackend};
use crate::klproj::{kl_project_ker_log, ConstraintOperator, DEFAULT_DR_ITERS, DEFAULT_TAU};
use crate::measures::{push_forward, validate_problem, UnfoldingProblem, RENORMALIZE_TOL};
use crate::numerics::{column_lse, log_sum_exp, row_lse};

/// Block structure of one regularized problem.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    m: usize,
    l: usize,
    n: usize,
    /// `-C / eps`, the only block of `log K~` that is neither 0 nor `-inf`.
    gibbs_log: DMatrix<f64>,
    /// Target second marginal `[nu; 1]`.
    pub b: Vec<f64>,
    log_b: Vec<f64>,
    pub constraint: ConstraintOperator,
    pub epsilon: f64,
}

impl BlockSystem {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry `(r, s)` of `log K~`.
    pub fn log_ktilde_entry(&self, r: usize, s: usize) -> f64 {
        match (r < self.m, s < self.n) {
            (true, true) => self.gibbs_log[(r, s)],
            (false, false) => 0.0,
            _ => f64::NEG_INFINITY,
        }
    }

    /// Dense `(m+L) x (n+1)` matrix `log K~` with `-inf` on the forbidden
    /// blocks.
    pub fn log_ktilde(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m + self.l, self.n + 1, |r, s| self.log_ktilde_entry(r, s))
    }

    /// `P = diag(u) K~ diag(v)`; forbidden blocks are exact zeros.
    pub fn plan(&self, state: &ScalingState) -> DMatrix<f64> {
        DMatrix::from_fn(self.m + self.l, self.n + 1, |r, s| {
            let k = self.log_ktilde_entry(r, s);
            if k == f64::NEG_INFINITY {
                0.0
            } else {
                (state.log_u[r] + k + state.log_v[s]).exp()
            }
        })
    }

    /// `log(K~ v)`, length `m + L`.
    pub fn log_kv(&self, log_v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m + self.l];
        row_lse(&self.gibbs_log, &log_v[..self.n], &mut out[..self.m]);
        out[self.m..].fill(log_v[self.n]);
        out
    }

    /// `log(K~^T u)`, length `n + 1`.
    pub fn log_ktu(&self, log_u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n + 1];
        column_lse(&self.gibbs_log, &log_u[..self.m], &mut out[..self.n]);
        out[self.n] = log_sum_exp(&log_u[self.m..]);
        out
    }
}

/// Builds `K~`, `b` and the constraint operator for a validated problem.
pub fn assemble(problem: &UnfoldingProblem, epsilon: f64) -> Result<BlockSystem> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("must be positive, got {epsilon}")));
    }
    let report = validate_problem(problem);
    if !report.is_pass() {
        return Err(Error::InvalidProblem(report.to_string()));
    }
    let b: Vec<f64> = problem.data.weights().iter().copied().chain(std::iter::once(1.0)).collect();
    Ok(BlockSystem {
        m: problem.m(),
        l: problem.l(),
        n: problem.n(),
        gibbs_log: problem.cost.map(|c| -c / epsilon),
        log_b: b.iter().map(|x| x.ln()).collect(),
        b,
        constraint: ConstraintOperator::new(problem.kernel.matrix())?,
        epsilon,
    })
}

/// Scaling vectors in log coordinates: `u = exp(log_u)`, `v = exp(log_v)`.
/// `eps * log_u[..m]` and `eps * log_v[..n]` are the Lagrange multipliers of
/// the two marginal constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingState {
    pub log_u: Vec<f64>,
    pub log_v: Vec<f64>,
}

impl ScalingState {
    /// `max |log u - log u'|, |log v - log v'|`.
    pub fn distance(&self, other: &ScalingState) -> f64 {
        self.log_u
            .iter()
            .zip(&other.log_u)
            .chain(self.log_v.iter().zip(&other.log_v))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Douglas-Rachford settings for the inner KL projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrParams {
    pub tau: f64,
    pub iters: usize,
}

impl Default for DrParams {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            iters: DEFAULT_DR_ITERS,
        }
    }
}

/// Residuals reported by a half step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResiduals {
    /// `||P^T 1 - b||_inf` after the v-update.
    pub second_marginal: f64,
    /// `||B (P 1)||_inf` after the u-update.
    pub ker: f64,
}

fn check_finite(block: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        let (min, max) = range(values.iter());
        return Err(Error::Overflow { block, min, max });
    }
    Ok(())
}

/// Second-marginal residual above which the log-domain arithmetic is taken
/// to have run out of precision. The v-update forces it to rounding level.
pub const PRECISION_TOL: f64 = 1e-6;

/// `v = b / K~^T u`. Returns the new `log v` and the second-marginal
/// residual of `diag(u) K~ diag(v)`.
pub fn v_update(system: &BlockSystem, log_u: &[f64]) -> Result<(Vec<f64>, f64)> {
    let log_ktu = system.log_ktu(log_u);
    let log_v: Vec<f64> = system.log_b.iter().zip(&log_ktu).map(|(b, s)| b - s).collect();
    check_finite("v scaling", &log_v)?;
    let residual = log_v
        .iter()
        .zip(&log_ktu)
        .zip(&system.b)
        .map(|((v, s), b)| ((v + s).exp() - b).abs())
        .fold(0.0, f64::max);
    if !(residual <= PRECISION_TOL) {
        let (min, max) = range(log_ktu.iter());
        return Err(Error::Overflow {
            block: "K~^T u (precision exhausted)",
            min,
            max,
        });
    }
    Ok((log_v, residual))
}

/// `u = Proj_kerB(u * K~v) / K~v`. Returns the new `log u` and the
/// ker-residual of the projected first marginal.
pub fn u_update(system: &BlockSystem, state: &ScalingState, dr: DrParams) -> Result<(Vec<f64>, f64)> {
    let log_kv = system.log_kv(&state.log_v);
    let log_w: Vec<f64> = state.log_u.iter().zip(&log_kv).map(|(u, k)| u + k).collect();
    check_finite("first marginal u*K~v", &log_w)?;
    let proj = kl_project_ker_log(&system.constraint, log_w, dr.tau, dr.iters)?;
    let log_u: Vec<f64> = proj.log_point.iter().zip(&log_kv).map(|(z, k)| z - k).collect();
    check_finite("u scaling (noisy block)", &log_u[..system.m])?;
    check_finite("u scaling (sigma block)", &log_u[system.m..])?;
    Ok((log_u, proj.residual))
}

/// How the sigma block of `u` is seeded.
///
/// Every u-update multiplies `u` by `exp(B^T f)` for some `f`, so the limit
/// of the iterations is the KL projection of the starting plan onto the
/// constraint set. It equals the minimizer of the regularized objective
/// only when `log u0` lies in the range of `B^T` (up to the free scale of
/// the sigma rows).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// `u0 = [c; sigma0]`. The limit depends on `sigma0` and `c`, which act
    /// as an additional prior on sigma.
    #[default]
    Prior,
    /// `u0 = [c; exp(-R^T log c)]`, so that `log u0 = B^T log c`. The
    /// iterations converge to the minimizer of the regularized objective;
    /// `sigma0` only enters through `c`.
    Consistent,
}

/// Settings for [`initialize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitParams {
    pub epsilon_init: f64,
    pub sinkhorn_iters: usize,
    /// Optional early exit for the Sinkhorn run.
    pub sinkhorn_tol: Option<f64>,
    pub mode: InitMode,
}

impl Default for InitParams {
    fn default() -> Self {
        Self {
            epsilon_init: 0.01,
            sinkhorn_iters: 100,
            sinkhorn_tol: None,
            mode: InitMode::Prior,
        }
    }
}

/// Initial scalings `u = [c; sigma0]` (see [`InitMode`]) where `c` is the
/// first scaling of the entropic plan between `R sigma0` and `nu` at
/// `epsilon_init`, followed by the v-update.
pub fn initialize(
    problem: &UnfoldingProblem,
    system: &BlockSystem,
    sigma0: &[f64],
    params: &InitParams,
) -> Result<ScalingState> {
    if sigma0.len() != system.l {
        return Err(Error::DimensionMismatch {
            context: "initial sigma",
            expected: system.l,
            found: sigma0.len(),
        });
    }
    if let Some(k) = sigma0.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::param("sigma0", format!("entry {k} must be strictly positive")));
    }
    let sum: f64 = sigma0.iter().sum();
    if (sum - 1.0).abs() > RENORMALIZE_TOL {
        return Err(Error::NotNormalized { sum });
    }
    let rs = push_forward(sigma0, &problem.kernel)?;
    let plan = sinkhorn_until(
        rs.weights(),
        problem.data.weights(),
        &problem.cost,
        params.epsilon_init,
        params.sinkhorn_iters,
        params.sinkhorn_tol,
    )?;
    let sigma_block: Vec<f64> = match params.mode {
        InitMode::Prior => sigma0.iter().map(|s| s.ln()).collect(),
        InitMode::Consistent => {
            let r = problem.kernel.matrix();
            (0..system.l)
                .map(|k| -r.column(k).iter().zip(&plan.log_c).map(|(r, c)| r * c).sum::<f64>())
                .collect()
        }
    };
    let log_u: Vec<f64> = plan.log_c.iter().copied().chain(sigma_block).collect();
    check_finite("initial u scaling", &log_u)?;
    let (log_v, _) = v_update(system, &log_u)?;
    Ok(ScalingState { log_u, log_v })
}

/// One u-update followed by one v-update.
pub fn outer_step(system: &BlockSystem, state: &ScalingState, dr: DrParams) -> Result<(ScalingState, StepResiduals)> {
    let (log_u, ker) = u_update(system, state, dr)?;
    let (log_v, second_marginal) = v_update(system, &log_u)?;
    Ok((ScalingState { log_u, log_v }, StepResiduals { second_marginal, ker }))
}

/// Current estimate `sigma_k = u_{m+k} v_{n+1}`, renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEstimate {
    pub sigma: Vec<f64>,
    /// `|sum_k u_{m+k} v_{n+1} - 1|` before renormalization.
    pub defect: f64,
}

pub fn extract_sigma(system: &BlockSystem, state: &ScalingState) -> SigmaEstimate {
    let lv = state.log_v[system.n];
    let raw: Vec<f64> = state.log_u[system.m..].iter().map(|u| (u + lv).exp()).collect();
    let sum: f64 = raw.iter().sum();
    SigmaEstimate {
        sigma: raw.iter().map(|s| s / sum).collect(),
        defect: (sum - 1.0).abs(),
    }
}

/// Solver parameters. The defaults are `eps = 3e-5`, `eps_init = 0.01`,
/// `tau = 1e-3`, 25 DR steps, 100 initial Sinkhorn sweeps, 200 outer steps
/// and a uniform starting `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub epsilon_init: f64,
    pub tau: f64,
    pub dr_iters: usize,
    pub init_sinkhorn_iters: usize,
    /// Optional early exit for the initial Sinkhorn run.
    pub init_sinkhorn_tol: Option<f64>,
    pub init_mode: InitMode,
    pub outer_iters: usize,
    /// `None` means uniform `1/L`.
    pub sigma0: Option<Vec<f64>>,
    /// Stop once the ker-residual and the relative change of sigma both
    /// fall below `EARLY_STOP_TOL`.
    pub early_stop: bool,
    pub metric: MetricBackend,
    /// Evaluate the transport metric every this many iterations (and at the
    /// last one).
    pub eval_every: usize,
}

pub const EARLY_STOP_TOL: f64 = 1e-9;

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 3e-5,
            epsilon_init: 0.01,
            tau: DEFAULT_TAU,
            dr_iters: DEFAULT_DR_ITERS,
            init_sinkhorn_iters: 100,
            init_sinkhorn_tol: None,
            init_mode: InitMode::Prior,
            outer_iters: 200,
            sigma0: None,
            early_stop: false,
            metric: MetricBackend::Auto,
            eval_every: 1,
        }
    }
}

/// One row of an iteration trace. Solver-specific fields are `None` when
/// they do not apply.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration count.
    pub iteration: usize,
    pub sigma: Vec<f64>,
    /// `W_p^p(nu_sigma, nu)` through the unbinned kernel.
    pub w2sq_to_data: Option<f64>,
    pub second_marginal_residual: Option<f64>,
    pub ker_residual: Option<f64>,
    /// Binned negative log-likelihood (Richardson-Lucy only).
    pub neg_log_likelihood: Option<f64>,
    /// Seconds since the start of the solve.
    pub elapsed: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Last recorded metric value.
    pub fn final_metric(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.w2sq_to_data)
    }
}

pub(crate) fn evaluate_sigma(problem: &UnfoldingProblem, sigma: &[f64], metric: &MetricBackend) -> Result<Option<f64>> {
    if matches!(metric, MetricBackend::None) {
        return Ok(None);
    }
    let image = push_forward(sigma, &problem.kernel)?;
    transport_cost(&image, &problem.data, problem.p, metric)
}

pub(crate) fn uniform(l: usize) -> Vec<f64> {
    vec![1.0 / l as f64; l]
}

/// Runs the initialization and `outer_iters` outer steps, recording sigma,
/// the transport metric to the data and the residuals after every step.
pub fn solve(problem: &UnfoldingProblem, config: &SolverConfig) -> Result<(Vec<f64>, IterationTrace)> {
    let start = Instant::now();
    let system = assemble(problem, config.epsilon)?;
    let sigma0 = config.sigma0.clone().unwrap_or_else(|| uniform(problem.l()));
    let init = InitParams {
        epsilon_init: config.epsilon_init,
        sinkhorn_iters: config.init_sinkhorn_iters,
        sinkhorn_tol: config.init_sinkhorn_tol,
        mode: config.init_mode,
    };
    let mut state = initialize(problem, &system, &sigma0, &init)?;
    let dr = DrParams {
        tau: config.tau,
        iters: config.dr_iters,
    };
    let every = config.eval_every.max(1);
    let mut trace = IterationTrace::default();
    let mut sigma = sigma0;
    for iteration in 1..=config.outer_iters {
        let (next, residuals) = outer_step(&system, &state, dr)?;
        state = next;
        let estimate = extract_sigma(&system, &state);
        let change = relative_change(&sigma, &estimate.sigma);
        sigma = estimate.sigma;
        let stop = config.early_stop && residuals.ker < EARLY_STOP_TOL && change < EARLY_STOP_TOL;
        let last = stop || iteration == config.outer_iters;
        let w2sq = if iteration % every == 0 || last {
            evaluate_sigma(problem, &sigma, &config.metric)?
        } else {
            None
        };
        trace.records.push(IterationRecord {
            iteration,
            sigma: sigma.clone(),
            w2sq_to_data: w2sq,
            second_marginal_residual: Some(residuals.second_marginal),
            ker_residual: Some(residuals.ker),
            neg_log_likelihood: None,
            elapsed: start.elapsed().as_secs_f64(),
        });
        if stop {
            break;
        }
    }
    Ok((sigma, trace))
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let diff = old.iter().zip(new).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = old.iter().map(|a| a.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}
