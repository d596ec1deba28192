//! Transport metrics, observables and kernel density estimates used to
//! evaluate unfolded measures.

mod exact;

pub use exact::{wasserstein_exact, wasserstein_exact_with_cap, TransportPlanExact, DEFAULT_CAP};

use crate::entropic_ot::sinkhorn;
use crate::error::{Error, Result};
use crate::measures::{cost_matrix, DiscreteMeasure, PointSet};

/// How `W_p^p` is evaluated along a trace.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MetricBackend {
    /// Skip evaluation.
    None,
    /// Quantile sweep in 1D, network simplex otherwise.
    #[default]
    Auto,
    /// Network simplex in every dimension.
    Exact,
    /// Linear cost of an entropic plan. Approximate; an upper bound on the
    /// exact value.
    Entropic { epsilon: f64, iters: usize },
}

/// `W_p^p(mu, nu)` with the chosen backend, or `None` for
/// [`MetricBackend::None`].
pub fn transport_cost(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64, backend: &MetricBackend) -> Result<Option<f64>> {
    match backend {
        MetricBackend::None => Ok(None),
        MetricBackend::Auto if mu.dim() == 1 && nu.dim() == 1 => wasserstein_1d(mu, nu, p).map(Some),
        MetricBackend::Auto | MetricBackend::Exact => wasserstein_exact(mu, nu, p).map(|(v, _)| Some(v)),
        MetricBackend::Entropic { epsilon, iters } => {
            let cost = cost_matrix(mu.support(), nu.support(), p)?;
            let plan = sinkhorn(mu.weights(), nu.weights(), &cost, *epsilon, *iters)?;
            let gamma = plan.plan();
            Ok(Some(gamma.component_mul(&cost).sum()))
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::param("p", format!("must be >= 1, got {p}")));
    }
    Ok(())
}

fn sorted_atoms(m: &DiscreteMeasure) -> Vec<(f64, f64)> {
    let mut atoms: Vec<(f64, f64)> = m.support().coords().iter().copied().zip(m.weights().iter().copied()).collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    atoms
}

/// `W_p^p` between two 1D measures via the monotone (quantile) coupling.
pub fn wasserstein_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64> {
    check_p(p)?;
    for m in [mu, nu] {
        if m.dim() != 1 {
            return Err(Error::InvalidMeasure(format!("1D transport needs d = 1, got d = {}", m.dim())));
        }
    }
    let a = sorted_atoms(mu);
    let b = sorted_atoms(nu);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    loop {
        let mass = ra.min(rb);
        if mass > 0.0 {
            total += mass * (a[i].0 - b[j].0).abs().powf(p);
        }
        ra -= mass;
        rb -= mass;
        let last_a = i + 1 == a.len();
        let last_b = j + 1 == b.len();
        if last_a && last_b {
            break;
        }
        // advance the side that ran out; the other carries its remainder
        if (ra <= rb && !last_a) || last_b {
            i += 1;
            ra = a[i].1 + ra.max(0.0);
        } else {
            j += 1;
            rb = b[j].1 + rb.max(0.0);
        }
    }
    Ok(total)
}

/// Moment summaries of a measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub mean_x1: f64,
    /// Weighted mean of `x1 / x2`; `None` in 1D or when a weighted atom has
    /// `x2 = 0`.
    pub mean_ratio_x1_x2: Option<f64>,
    /// `<|x|^2> - |<x>|^2`.
    pub variance: f64,
    /// `None` in 1D.
    pub mean_x2: Option<f64>,
}

pub fn observables(measure: &DiscreteMeasure) -> Observables {
    let d = measure.dim();
    let mut mean = vec![0.0; d];
    let mut second = 0.0;
    let mut ratio = Some(0.0);
    for (x, w) in measure.support().iter().zip(measure.weights()) {
        for (m, xi) in mean.iter_mut().zip(x) {
            *m += w * xi;
        }
        second += w * x.iter().map(|v| v * v).sum::<f64>();
        ratio = match (ratio, d >= 2) {
            (Some(r), true) if x[1] != 0.0 => Some(r + w * x[0] / x[1]),
            (Some(r), true) if *w == 0.0 => Some(r),
            _ => None,
        };
    }
    let variance = (second - mean.iter().map(|m| m * m).sum::<f64>()).max(0.0);
    Observables {
        mean_x1: mean[0],
        mean_ratio_x1_x2: ratio,
        variance,
        mean_x2: mean.get(1).copied(),
    }
}

pub const DEFAULT_BANDWIDTH: f64 = 0.05;

/// Gaussian kernel density estimate of a 1D measure evaluated on `grid`.
pub fn kde_1d(measure: &DiscreteMeasure, bandwidth: f64, grid: &[f64]) -> Result<Vec<f64>> {
    if measure.dim() != 1 {
        return Err(Error::InvalidMeasure(format!("kde needs d = 1, got d = {}", measure.dim())));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::param("bandwidth", "must be positive"));
    }
    let norm = 1.0 / (bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|g| {
            measure
                .support()
                .coords()
                .iter()
                .zip(measure.weights())
                .map(|(x, w)| {
                    let z = (g - x) / bandwidth;
                    w * norm * (-0.5 * z * z).exp()
                })
                .sum()
        })
        .collect())
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Merges atoms with bitwise equal coordinates, summing their weights. The
/// returned map sends each original index to its merged index.
pub(crate) fn merge_duplicates(measure: &DiscreteMeasure) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..measure.len()).collect();
    let key = |i: usize| measure.point(i).iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    order.sort_by_key(|&i| key(i));
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut weights = Vec::new();
    let mut map = vec![0; measure.len()];
    let mut last: Option<Vec<u64>> = None;
    for i in order {
        let k = key(i);
        if last.as_ref() != Some(&k) {
            points.push(measure.point(i).to_vec());
            weights.push(0.0);
            last = Some(k);
        }
        *weights.last_mut().unwrap() += measure.weights()[i];
        map[i] = points.len() - 1;
    }
    (points, weights, map)
}

pub(crate) fn point_set(points: &[Vec<f64>]) -> Result<PointSet> {
    PointSet::from_points(points)
}
