//! Two-dimensional problems built from per-event kernel samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{KernelSampleFile, SampleRow};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, KernelMatrix, PointSet, UnfoldingProblem};

/// Correlated Gaussian stand-in for event data: locations
/// `x ~ N(mean, cov)` and detector samples `z ~ N(x + shift, noise_cov)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSampler {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub noise_shift: [f64; 2],
    pub noise_cov: [[f64; 2]; 2],
}

impl Default for SyntheticSampler {
    fn default() -> Self {
        Self {
            mean: [30.0, -5.0],
            cov: [[40.0, 4.0], [4.0, 6.0]],
            noise_shift: [-1.0, 0.3],
            noise_cov: [[6.0, 0.6], [0.6, 1.5]],
        }
    }
}

/// Lower Cholesky factor of a 2x2 covariance.
fn cholesky(c: [[f64; 2]; 2], name: &'static str) -> Result<[[f64; 2]; 2]> {
    let sym = (c[0][1] - c[1][0]).abs() <= 1e-12 * (c[0][1].abs() + 1.0);
    let l00 = c[0][0].sqrt();
    let l10 = c[1][0] / l00;
    let rest = c[1][1] - l10 * l10;
    if !(sym && c[0][0] > 0.0 && rest > 0.0) {
        return Err(Error::param(name, "must be symmetric positive definite"));
    }
    Ok([[l00, 0.0], [l10, rest.sqrt()]])
}

impl SyntheticSampler {
    /// `rows` source rows with `m` samples each.
    pub fn sample(&self, rows: usize, m: usize, seed: u64) -> Result<KernelSampleFile> {
        let lc = cholesky(self.cov, "cov")?;
        let ln = cholesky(self.noise_cov, "noise_cov")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |shift: [f64; 2], l: [[f64; 2]; 2]| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            vec![shift[0] + l[0][0] * a, shift[1] + l[1][0] * a + l[1][1] * b]
        };
        let rows = (0..rows)
            .map(|_| {
                let x = gauss(self.mean, lc);
                let center = [x[0] + self.noise_shift[0], x[1] + self.noise_shift[1]];
                let z = (0..m).map(|_| gauss(center, ln)).collect();
                SampleRow { x, z }
            })
            .collect();
        Ok(KernelSampleFile { d: 2, m, rows })
    }
}

/// Where event rows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseSampler {
    Synthetic(SyntheticSampler),
    /// Rows of an ingested sample file, used in file order.
    Samples(KernelSampleFile),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoDimConfig {
    pub l: usize,
    pub l_prime: usize,
    pub m: usize,
    pub m_prime: usize,
    /// Center and diagonal variances of the Gaussian the truth weights are
    /// proportional to.
    pub truth_mean: [f64; 2],
    pub truth_var: [f64; 2],
    pub base: BaseSampler,
    pub p: f64,
    pub seed: u64,
}

impl Default for TwoDimConfig {
    fn default() -> Self {
        Self {
            l: 100,
            l_prime: 100,
            m: 1,
            m_prime: 3,
            truth_mean: [30.0, -5.0],
            truth_var: [10.0, 2.0],
            base: BaseSampler::Synthetic(SyntheticSampler::default()),
            p: 2.0,
            seed: 0,
        }
    }
}

/// Normalized weights proportional to `N(mean, diag(var))` at each point.
pub fn gaussian_weights(points: &[Vec<f64>], mean: [f64; 2], var: [f64; 2]) -> Result<Vec<f64>> {
    if !(var[0] > 0.0 && var[1] > 0.0) {
        return Err(Error::param("truth_var", "must be positive"));
    }
    let log_w: Vec<f64> = points
        .iter()
        .map(|x| -0.5 * ((x[0] - mean[0]).powi(2) / var[0] + (x[1] - mean[1]).powi(2) / var[1]))
        .collect();
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.iter().map(|v| v / total).collect())
}

/// The first `L` rows give the prior support and its kernel samples; the
/// next `L'` rows give the truth locations and the samples forming the data.
pub fn generate_2d(config: &TwoDimConfig) -> Result<(UnfoldingProblem, DiscreteMeasure)> {
    for (name, c) in [("L", config.l), ("L'", config.l_prime), ("M", config.m), ("M'", config.m_prime)] {
        if c == 0 {
            return Err(Error::param(name, "must be at least 1"));
        }
    }
    let needed_rows = config.l + config.l_prime;
    let needed_m = config.m.max(config.m_prime);
    let owned;
    let file = match &config.base {
        BaseSampler::Synthetic(s) => {
            owned = s.sample(needed_rows, needed_m, config.seed)?;
            &owned
        }
        BaseSampler::Samples(f) => f,
    };
    if file.d != 2 {
        return Err(Error::InvalidProblem(format!("sample file has d = {}, need 2", file.d)));
    }
    if file.rows.len() < needed_rows {
        return Err(Error::InvalidProblem(format!(
            "sample file has {} rows, need L + L' = {needed_rows}",
            file.rows.len()
        )));
    }
    if file.m < needed_m {
        return Err(Error::InvalidProblem(format!(
            "sample file has {} samples per row, need {needed_m}",
            file.m
        )));
    }

    let (prior_rows, rest) = file.rows.split_at(config.l);
    let truth_rows = &rest[..config.l_prime];

    let prior: Vec<Vec<f64>> = prior_rows.iter().map(|r| r.x.clone()).collect();
    let atoms: Vec<Vec<f64>> = prior_rows.iter().flat_map(|r| r.z[..config.m].iter().cloned()).collect();
    let kernel = KernelMatrix::from_samples(PointSet::from_points(&prior)?, PointSet::from_points(&atoms)?, config.m)?;

    let truth: Vec<Vec<f64>> = truth_rows.iter().map(|r| r.x.clone()).collect();
    let weights = gaussian_weights(&truth, config.truth_mean, config.truth_var)?;
    let data_atoms: Vec<Vec<f64>> = truth_rows.iter().flat_map(|r| r.z[..config.m_prime].iter().cloned()).collect();
    let data_weights: Vec<f64> = weights
        .iter()
        .flat_map(|w| std::iter::repeat_n(w / config.m_prime as f64, config.m_prime))
        .collect();

    let data = DiscreteMeasure::new(PointSet::from_points(&data_atoms)?, data_weights)?;
    let sigma_true = DiscreteMeasure::new(PointSet::from_points(&truth)?, weights)?;
    Ok((UnfoldingProblem::new(kernel, data, config.p)?, sigma_true))
}
