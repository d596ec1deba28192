//! Synthetic unfolding problems and kernel sample files.
//!
//! All generators draw from a ChaCha8 stream seeded by the config, so a
//! config determines its problem bit for bit.

mod ingest;
mod two_dim;

pub use ingest::{ingest_kernel_csv, parse_kernel_csv, KernelSampleFile, SampleRow};
pub use two_dim::{generate_2d, BaseSampler, SyntheticSampler, TwoDimConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::eval::linspace;
use crate::measures::{DiscreteMeasure, KernelMatrix, PointSet, UnfoldingProblem};

/// One Gaussian component of the 1D truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub center: f64,
    pub variance: f64,
}

/// Deterministic map applied to a true location before kernel noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportMap {
    /// `x + sgn(x) / 2`.
    #[default]
    IdentityPlusHalfSign,
    Identity,
}

impl TransportMap {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            TransportMap::Identity => x,
            TransportMap::IdentityPlusHalfSign => {
                let s = if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                x + 0.5 * s
            }
        }
    }
}

/// How the prior support is laid out on `prior_range`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorLayout {
    /// `L` equally spaced points including both ends.
    #[default]
    Grid,
    /// `L` independent uniform draws.
    Iid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneDimConfig {
    pub l: usize,
    pub l_prime: usize,
    /// Kernel samples per prior point.
    pub m: usize,
    /// Kernel samples per truth point.
    pub m_prime: usize,
    pub mixture: Vec<MixtureComponent>,
    /// Kernel noise variance.
    pub beta: f64,
    pub map: TransportMap,
    pub prior_range: (f64, f64),
    pub prior_layout: PriorLayout,
    pub p: f64,
    pub seed: u64,
}

impl Default for OneDimConfig {
    fn default() -> Self {
        let v = 1.0 / 20.0;
        Self {
            l: 150,
            l_prime: 150,
            m: 1,
            m_prime: 3,
            mixture: vec![
                MixtureComponent {
                    weight: 0.25,
                    center: 0.75,
                    variance: v,
                },
                MixtureComponent {
                    weight: 0.5,
                    center: -0.75,
                    variance: v,
                },
                MixtureComponent {
                    weight: 0.25,
                    center: 0.0,
                    variance: v,
                },
            ],
            beta: 0.01,
            map: TransportMap::IdentityPlusHalfSign,
            prior_range: (-1.0, 1.0),
            prior_layout: PriorLayout::Grid,
            p: 2.0,
            seed: 0,
        }
    }
}

impl OneDimConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("L", self.l), ("L'", self.l_prime), ("M", self.m), ("M'", self.m_prime)] {
            if c == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if self.mixture.is_empty() {
            return Err(Error::param("mixture", "needs at least one component"));
        }
        let total: f64 = self.mixture.iter().map(|c| c.weight).sum();
        if self.mixture.iter().any(|c| !(c.weight >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::param("mixture", format!("weights must be on the simplex, sum = {total}")));
        }
        if self.mixture.iter().any(|c| !(c.variance > 0.0 && c.variance.is_finite() && c.center.is_finite())) {
            return Err(Error::param("mixture", "variances must be positive and centers finite"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", "must be positive"));
        }
        let (lo, hi) = self.prior_range;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::param("prior_range", format!("empty interval [{lo}, {hi}]")));
        }
        Ok(())
    }
}

pub(crate) fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).expect("standard deviation validated positive")
}

/// Kernel samples `t(x) + N(0, beta)`, `per_source` per point, block by block.
fn kernel_samples(rng: &mut ChaCha8Rng, sources: &[f64], per_source: usize, beta: f64, map: TransportMap) -> Vec<f64> {
    let noise = normal(0.0, beta.sqrt());
    let mut out = Vec::with_capacity(sources.len() * per_source);
    for &x in sources {
        let t = map.apply(x);
        for _ in 0..per_source {
            out.push(t + noise.sample(rng));
        }
    }
    out
}

/// Builds the 1D problem: prior support, truth drawn from the mixture,
/// kernel samples for both and data equal to the truth's noisy image.
///
/// Draw order: prior (iid layout only), truth locations, prior kernel
/// samples, truth kernel samples.
pub fn generate_1d(config: &OneDimConfig) -> Result<(UnfoldingProblem, DiscreteMeasure)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (lo, hi) = config.prior_range;
    let prior = match config.prior_layout {
        PriorLayout::Grid => linspace(lo, hi, config.l),
        PriorLayout::Iid => (0..config.l).map(|_| rng.random_range(lo..hi)).collect(),
    };

    let components: Vec<Normal<f64>> = config.mixture.iter().map(|c| normal(c.center, c.variance.sqrt())).collect();
    let truth: Vec<f64> = (0..config.l_prime)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = components.len() - 1;
            for (k, c) in config.mixture.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            components[pick].sample(&mut rng)
        })
        .collect();

    let atoms = kernel_samples(&mut rng, &prior, config.m, config.beta, config.map);
    let data_atoms = kernel_samples(&mut rng, &truth, config.m_prime, config.beta, config.map);

    let kernel = KernelMatrix::from_samples(PointSet::from_scalars(&prior), PointSet::from_scalars(&atoms), config.m)?;
    let data = DiscreteMeasure::uniform(PointSet::from_scalars(&data_atoms))?;
    let sigma_true = DiscreteMeasure::uniform(PointSet::from_scalars(&truth))?;
    Ok((UnfoldingProblem::new(kernel, data, config.p)?, sigma_true))
}
