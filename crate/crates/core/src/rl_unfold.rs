//! Richardson-Lucy (expectation maximization) unfolding on binned data.
//!
//! Kernel atoms and data atoms are histogrammed onto a regular grid, the
//! histograms are mixed with a uniform floor so every cell has positive
//! mass, and the multiplicative update
//!
//! ```text
//! sigma'_k = sigma_k * sum_j R_jk nu_j / (R sigma)_j
//! ```
//!
//! is iterated. Iterates are evaluated through the unbinned kernel so that
//! they are comparable with the transport solver.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::eval::MetricBackend;
use crate::measures::{PointSet, UnfoldingProblem, WEIGHT_TOL};
use crate::ot_unfold::{evaluate_sigma, uniform, IterationRecord, IterationTrace};

/// The mixing weight used when none is given.
pub const DEFAULT_EPSILON_BIN: f64 = 1e-40;

/// Number of grid cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BinSpec {
    /// The same count on every axis.
    PerAxis(usize),
    /// One count per axis.
    Axes(Vec<usize>),
    /// Total number of cells; each axis gets `round(n^(1/d))`.
    Total(usize),
}

impl BinSpec {
    pub fn per_axis(&self, dim: usize) -> Result<Vec<usize>> {
        let counts = match self {
            BinSpec::PerAxis(n) => vec![*n; dim],
            BinSpec::Axes(v) => {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        context: "bin counts per axis",
                        expected: dim,
                        found: v.len(),
                    });
                }
                v.clone()
            }
            BinSpec::Total(n) => vec![(*n as f64).powf(1.0 / dim as f64).round() as usize; dim],
        };
        if counts.iter().any(|&c| c < 2) {
            return Err(Error::param("n_bin", format!("need at least 2 bins per axis, got {counts:?}")));
        }
        Ok(counts)
    }
}

/// Which atoms the grid spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridMode {
    /// One grid over the union of kernel and data atoms.
    #[default]
    Shared,
    /// Kernel atoms and data atoms each get a grid over their own range;
    /// cell `j` of one grid is identified with cell `j` of the other.
    Separate,
}

/// Regular grid with half-open cells; the last cell on each axis is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Grid {
    fn spanning<'a>(sets: impl IntoIterator<Item = &'a PointSet>, counts: Vec<usize>) -> Result<Self> {
        let d = counts.len();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for set in sets {
            for x in set.iter() {
                for a in 0..d {
                    lo[a] = lo[a].min(x[a]);
                    hi[a] = hi[a].max(x[a]);
                }
            }
        }
        for a in 0..d {
            if !(hi[a] > lo[a]) {
                return Err(Error::InvalidProblem(format!("all atoms coincide on axis {a}; grid is degenerate")));
            }
        }
        Ok(Self { lo, hi, counts })
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat cell index of `x`; the first axis varies fastest. Points outside
    /// the range are clamped to the boundary cells.
    pub fn cell(&self, x: &[f64]) -> usize {
        let mut index = 0;
        let mut stride = 1;
        for (a, &n) in self.counts.iter().enumerate() {
            let width = (self.hi[a] - self.lo[a]) / n as f64;
            let k = ((x[a] - self.lo[a]) / width).floor();
            let k = if k < 0.0 { 0 } else { (k as usize).min(n - 1) };
            index += k * stride;
            stride *= n;
        }
        index
    }

    pub fn centers(&self) -> PointSet {
        let d = self.counts.len();
        let mut coords = Vec::with_capacity(self.len() * d);
        for flat in 0..self.len() {
            let mut rest = flat;
            for a in 0..d {
                let n = self.counts[a];
                let k = rest % n;
                rest /= n;
                let width = (self.hi[a] - self.lo[a]) / n as f64;
                coords.push(self.lo[a] + (k as f64 + 0.5) * width);
            }
        }
        PointSet::new(d, coords).expect("grid coordinates are well formed")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedProblem {
    /// Cell centers of the grid the data was binned on.
    pub grid_centers: PointSet,
    /// `n_bin x L`, column stochastic.
    pub r_bar: DMatrix<f64>,
    pub nu_bar: Vec<f64>,
    pub epsilon_bin: f64,
}

impl BinnedProblem {
    pub fn n_bin(&self) -> usize {
        self.nu_bar.len()
    }

    pub fn l(&self) -> usize {
        self.r_bar.ncols()
    }
}

/// Histograms the kernel and the data onto a regular grid and mixes both
/// with the uniform weight `epsilon_bin / n_bin`.
pub fn bin_problem(problem: &UnfoldingProblem, bins: &BinSpec, epsilon_bin: f64, mode: GridMode) -> Result<BinnedProblem> {
    if !(epsilon_bin > 0.0 && epsilon_bin < 1.0) {
        return Err(Error::param("epsilon_bin", format!("must lie in (0, 1), got {epsilon_bin}")));
    }
    let atoms = problem.kernel.atoms();
    let data = problem.data.support();
    let counts = bins.per_axis(atoms.dim())?;
    let (kernel_grid, data_grid) = match mode {
        GridMode::Shared => {
            let g = Grid::spanning([atoms, data], counts)?;
            (g.clone(), g)
        }
        GridMode::Separate => (Grid::spanning([atoms], counts.clone())?, Grid::spanning([data], counts)?),
    };
    let n_bin = kernel_grid.len();
    let floor = epsilon_bin / n_bin as f64;

    let r = problem.kernel.matrix();
    let mut r_bar = DMatrix::zeros(n_bin, problem.l());
    for (i, x) in atoms.iter().enumerate() {
        let j = kernel_grid.cell(x);
        for k in 0..r.ncols() {
            r_bar[(j, k)] += r[(i, k)];
        }
    }
    r_bar.apply(|v| *v = (1.0 - epsilon_bin) * *v + floor);

    let mut nu_bar = vec![0.0; n_bin];
    for (x, w) in data.iter().zip(problem.data.weights()) {
        nu_bar[data_grid.cell(x)] += w;
    }
    for v in nu_bar.iter_mut() {
        *v = (1.0 - epsilon_bin) * *v + floor;
    }

    Ok(BinnedProblem {
        grid_centers: data_grid.centers(),
        r_bar,
        nu_bar,
        epsilon_bin,
    })
}

fn check_sigma(binned: &BinnedProblem, sigma: &[f64]) -> Result<()> {
    if sigma.len() != binned.l() {
        return Err(Error::DimensionMismatch {
            context: "sigma",
            expected: binned.l(),
            found: sigma.len(),
        });
    }
    if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::param("sigma", "entries must be strictly positive"));
    }
    Ok(())
}

/// One multiplicative update.
pub fn rl_step(binned: &BinnedProblem, sigma: &[f64]) -> Result<Vec<f64>> {
    check_sigma(binned, sigma)?;
    Ok(step_unchecked(binned, sigma))
}

fn step_unchecked(binned: &BinnedProblem, sigma: &[f64]) -> Vec<f64> {
    let s = DVector::from_column_slice(sigma);
    let image = &binned.r_bar * &s;
    assert!(image.iter().all(|v| *v > 0.0), "binned image vanished despite mixing");
    let ratio = DVector::from_iterator(image.len(), binned.nu_bar.iter().zip(image.iter()).map(|(n, r)| n / r));
    let back = binned.r_bar.tr_mul(&ratio);
    sigma.iter().zip(back.iter()).map(|(s, b)| s * b).collect()
}

/// `-sum_j nu_j log (R sigma)_j`.
pub fn neg_log_likelihood(binned: &BinnedProblem, sigma: &[f64]) -> Result<f64> {
    if sigma.len() != binned.l() {
        return Err(Error::DimensionMismatch {
            context: "sigma",
            expected: binned.l(),
            found: sigma.len(),
        });
    }
    let image = &binned.r_bar * DVector::from_column_slice(sigma);
    Ok(-binned.nu_bar.iter().zip(image.iter()).map(|(n, r)| n * r.ln()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlConfig {
    pub bins: BinSpec,
    pub epsilon_bin: f64,
    pub grid: GridMode,
    pub iters: usize,
    /// `None` means uniform.
    pub sigma0: Option<Vec<f64>>,
    pub metric: MetricBackend,
    pub eval_every: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            bins: BinSpec::PerAxis(28),
            epsilon_bin: DEFAULT_EPSILON_BIN,
            grid: GridMode::Shared,
            iters: 200,
            sigma0: None,
            metric: MetricBackend::Auto,
            eval_every: 1,
        }
    }
}

/// Bins the problem and runs `iters` updates, recording sigma, the binned
/// negative log-likelihood and `W_p^p` of the unbinned image to the data.
pub fn rl_solve(problem: &UnfoldingProblem, config: &RlConfig) -> Result<(Vec<f64>, IterationTrace)> {
    let start = Instant::now();
    let binned = bin_problem(problem, &config.bins, config.epsilon_bin, config.grid)?;
    let mut sigma = config.sigma0.clone().unwrap_or_else(|| uniform(problem.l()));
    check_sigma(&binned, &sigma)?;
    let sum: f64 = sigma.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_TOL.max(1e-9) {
        return Err(Error::NotNormalized { sum });
    }
    let every = config.eval_every.max(1);
    let mut trace = IterationTrace::default();
    for iteration in 1..=config.iters {
        sigma = step_unchecked(&binned, &sigma);
        let w2sq = if iteration % every == 0 || iteration == config.iters {
            evaluate_sigma(problem, &sigma, &config.metric)?
        } else {
            None
        };
        trace.records.push(IterationRecord {
            iteration,
            sigma: sigma.clone(),
            w2sq_to_data: w2sq,
            second_marginal_residual: None,
            ker_residual: None,
            neg_log_likelihood: Some(neg_log_likelihood(&binned, &sigma)?),
            elapsed: start.elapsed().as_secs_f64(),
        });
    }
    Ok((sigma, trace))
}
