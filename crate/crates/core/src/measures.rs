//! Finitely supported measures, discrete Markov kernels and the assembled
//! unfolding problem.
//!
//! Points are stored flattened in row-major order (`dim` coordinates per
//! point). Duplicate atoms are allowed and never merged here.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance on `|sum(weights) - 1|` that a stored measure must satisfy.
pub const WEIGHT_TOL: f64 = 1e-12;
/// Constructors renormalize weights whose sum is within this distance of 1.
pub const RENORMALIZE_TOL: f64 = 1e-9;

/// An ordered list of points in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim", "must be positive"));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                context: "point coordinates",
                expected: dim * (coords.len() / dim + 1),
                found: coords.len(),
            });
        }
        Ok(Self { dim, coords })
    }

    /// Builds a point set from nested coordinates; every point must have the
    /// same dimension.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidMeasure("empty point list".into()))?;
        let mut coords = Vec::with_capacity(dim * points.len());
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "point dimension",
                    expected: dim,
                    found: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    /// One-dimensional points.
    pub fn from_scalars(values: &[f64]) -> Self {
        Self {
            dim: 1,
            coords: values.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Coordinate `axis` of every point.
    pub fn axis(&self, axis: usize) -> impl Iterator<Item = f64> + '_ {
        self.iter().map(move |p| p[axis])
    }

    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "translation vector",
                expected: self.dim,
                found: shift.len(),
            });
        }
        let coords = self
            .coords
            .iter()
            .enumerate()
            .map(|(i, c)| c + shift[i % self.dim])
            .collect();
        Ok(Self {
            dim: self.dim,
            coords,
        })
    }
}

/// Weighted point cloud on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    support: PointSet,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Checked constructor. Weights must be nonnegative and finite; a sum
    /// within [`RENORMALIZE_TOL`] of one is renormalized, anything else is
    /// rejected.
    pub fn new(support: PointSet, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                context: "measure weights",
                expected: support.len(),
                found: weights.len(),
            });
        }
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("empty support".into()));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!(
                "weight {i} is negative or not finite ({})",
                weights[i]
            )));
        }
        if support.coords().iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite coordinate".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > RENORMALIZE_TOL {
            return Err(Error::NotNormalized { sum });
        }
        let weights = if (sum - 1.0).abs() > WEIGHT_TOL {
            weights.into_iter().map(|w| w / sum).collect()
        } else {
            weights
        };
        Ok(Self { support, weights })
    }

    /// Uniform weights `1/n` on the given support.
    pub fn uniform(support: PointSet) -> Result<Self> {
        let n = support.len();
        if n == 0 {
            return Err(Error::InvalidMeasure("empty support".into()));
        }
        Self::new(support, vec![1.0 / n as f64; n])
    }

    /// Unchecked constructor; only the shape is verified. Use
    /// [`validate_measure`] to diagnose the result.
    pub fn from_raw(support: PointSet, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                context: "measure weights",
                expected: support.len(),
                found: weights.len(),
            });
        }
        Ok(Self { support, weights })
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn support(&self) -> &PointSet {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.support.point(i)
    }

    /// Same support, new weights (checked).
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.support.clone(), weights)
    }
}

/// Column-stochastic `m x L` matrix describing where mass at each source
/// point `x_k` lands among the atoms `y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    matrix: DMatrix<f64>,
    atoms: PointSet,
    source_support: PointSet,
}

impl KernelMatrix {
    /// Checked constructor: shapes must agree, entries nonnegative, every
    /// column sums to one and every row sum is positive.
    pub fn new(matrix: DMatrix<f64>, atoms: PointSet, source_support: PointSet) -> Result<Self> {
        let kernel = Self::from_raw(matrix, atoms, source_support)?;
        let mut violations = Vec::new();
        kernel.check_into(&mut violations);
        match violations.first() {
            None => Ok(kernel),
            Some(v) => Err(Error::InvalidProblem(v.to_string())),
        }
    }

    pub fn from_raw(matrix: DMatrix<f64>, atoms: PointSet, source_support: PointSet) -> Result<Self> {
        if matrix.nrows() != atoms.len() {
            return Err(Error::DimensionMismatch {
                context: "kernel rows vs atoms",
                expected: atoms.len(),
                found: matrix.nrows(),
            });
        }
        if matrix.ncols() != source_support.len() {
            return Err(Error::DimensionMismatch {
                context: "kernel columns vs source support",
                expected: source_support.len(),
                found: matrix.ncols(),
            });
        }
        Ok(Self {
            matrix,
            atoms,
            source_support,
        })
    }

    /// Block-sparse kernel where column `k` puts mass `1/M` on the `M`
    /// consecutive atoms `k*M..(k+1)*M`.
    pub fn from_samples(source_support: PointSet, atoms: PointSet, per_source: usize) -> Result<Self> {
        let l = source_support.len();
        if per_source == 0 || atoms.len() != l * per_source {
            return Err(Error::DimensionMismatch {
                context: "kernel samples",
                expected: l * per_source.max(1),
                found: atoms.len(),
            });
        }
        let mut matrix = DMatrix::zeros(atoms.len(), l);
        let w = 1.0 / per_source as f64;
        for k in 0..l {
            for i in k * per_source..(k + 1) * per_source {
                matrix[(i, k)] = w;
            }
        }
        Self::new(matrix, atoms, source_support)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn atoms(&self) -> &PointSet {
        &self.atoms
    }

    pub fn source_support(&self) -> &PointSet {
        &self.source_support
    }

    /// Number of atoms `m`.
    pub fn n_atoms(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of source points `L`.
    pub fn n_sources(&self) -> usize {
        self.matrix.ncols()
    }

    fn check_into(&self, out: &mut Vec<Violation>) {
        if self.atoms.dim() != self.source_support.dim() {
            out.push(Violation::DimensionMismatch {
                what: "kernel atoms vs source support",
                expected: self.source_support.dim(),
                found: self.atoms.dim(),
            });
        }
        for ((i, k), &r) in indexed(&self.matrix) {
            if !(r.is_finite() && r >= 0.0) {
                out.push(Violation::KernelEntry { row: i, col: k, value: r });
            }
        }
        for (k, col) in self.matrix.column_iter().enumerate() {
            let sum: f64 = col.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_TOL {
                out.push(Violation::ColumnNotStochastic { col: k, sum });
            }
        }
        for (i, row) in self.matrix.row_iter().enumerate() {
            if row.iter().sum::<f64>() <= 0.0 {
                out.push(Violation::RowSumZero { row: i });
            }
        }
    }
}

fn indexed(m: &DMatrix<f64>) -> impl Iterator<Item = ((usize, usize), &f64)> + '_ {
    let rows = m.nrows();
    m.iter().enumerate().map(move |(idx, v)| ((idx % rows, idx / rows), v))
}

/// Prior support, noise kernel, measured data and the `|y_i - y'_j|^p`
/// cost between kernel atoms and data atoms.
#[derive(Debug, Clone)]
pub struct UnfoldingProblem {
    pub prior_support: PointSet,
    pub kernel: KernelMatrix,
    pub data: DiscreteMeasure,
    pub p: f64,
    pub cost: DMatrix<f64>,
}

impl UnfoldingProblem {
    /// Assembles and validates a problem. The prior support is taken from
    /// the kernel's source support.
    pub fn new(kernel: KernelMatrix, data: DiscreteMeasure, p: f64) -> Result<Self> {
        let cost = cost_matrix(kernel.atoms(), data.support(), p)?;
        let problem = Self {
            prior_support: kernel.source_support().clone(),
            kernel,
            data,
            p,
            cost,
        };
        let report = validate_problem(&problem);
        if report.is_pass() {
            Ok(problem)
        } else {
            Err(Error::InvalidProblem(report.to_string()))
        }
    }

    /// `m`, kernel atom count.
    pub fn m(&self) -> usize {
        self.kernel.n_atoms()
    }

    /// `L`, prior support size.
    pub fn l(&self) -> usize {
        self.kernel.n_sources()
    }

    /// `n`, data atom count.
    pub fn n(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSumZero { row: usize },
    ColumnNotStochastic { col: usize, sum: f64 },
    KernelEntry { row: usize, col: usize, value: f64 },
    WeightsNotNormalized { sum: f64 },
    NegativeWeight { index: usize, value: f64 },
    NonFiniteCoordinate { index: usize },
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    CostShape { rows: usize, cols: usize, expected_rows: usize, expected_cols: usize },
    CostEntry { row: usize, col: usize, value: f64 },
    SupportMismatch,
    ExponentBelowOne { p: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSumZero { row } => write!(f, "row sum zero at {row}"),
            Violation::ColumnNotStochastic { col, sum } => {
                write!(f, "column {col} sums to {sum}, not 1")
            }
            Violation::KernelEntry { row, col, value } => {
                write!(f, "kernel entry ({row}, {col}) = {value} is negative or not finite")
            }
            Violation::WeightsNotNormalized { sum } => {
                write!(f, "weights not normalized (sum = {sum})")
            }
            Violation::NegativeWeight { index, value } => {
                write!(f, "weight {index} = {value} is negative or not finite")
            }
            Violation::NonFiniteCoordinate { index } => {
                write!(f, "point {index} has a non-finite coordinate")
            }
            Violation::DimensionMismatch { what, expected, found } => {
                write!(f, "dimension mismatch in {what}: expected {expected}, found {found}")
            }
            Violation::CostShape {
                rows,
                cols,
                expected_rows,
                expected_cols,
            } => write!(
                f,
                "cost matrix is {rows}x{cols}, expected {expected_rows}x{expected_cols}"
            ),
            Violation::CostEntry { row, col, value } => {
                write!(f, "cost entry ({row}, {col}) = {value} is negative or not finite")
            }
            Violation::SupportMismatch => {
                write!(f, "kernel source support differs from prior support")
            }
            Violation::ExponentBelowOne { p } => write!(f, "cost exponent p = {p} < 1"),
        }
    }
}

/// Outcome of [`validate_problem`]: empty means every invariant holds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_pass() {
            return write!(f, "pass");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_measure(measure: &DiscreteMeasure) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_measure(measure, &mut report.violations);
    report
}

fn check_measure(measure: &DiscreteMeasure, out: &mut Vec<Violation>) {
    for (i, &w) in measure.weights().iter().enumerate() {
        if !(w.is_finite() && w >= 0.0) {
            out.push(Violation::NegativeWeight { index: i, value: w });
        }
    }
    let sum: f64 = measure.weights().iter().sum();
    if !((sum - 1.0).abs() <= WEIGHT_TOL) {
        out.push(Violation::WeightsNotNormalized { sum });
    }
    for (i, p) in measure.support().iter().enumerate() {
        if p.iter().any(|c| !c.is_finite()) {
            out.push(Violation::NonFiniteCoordinate { index: i });
        }
    }
}

/// Checks every structural invariant of an unfolding problem and lists the
/// violations with their indices.
pub fn validate_problem(problem: &UnfoldingProblem) -> ValidationReport {
    let mut v = Vec::new();
    problem.kernel.check_into(&mut v);
    check_measure(&problem.data, &mut v);
    if problem.data.dim() != problem.kernel.atoms().dim() {
        v.push(Violation::DimensionMismatch {
            what: "data atoms vs kernel atoms",
            expected: problem.kernel.atoms().dim(),
            found: problem.data.dim(),
        });
    }
    if problem.kernel.source_support() != &problem.prior_support {
        v.push(Violation::SupportMismatch);
    }
    if !(problem.p >= 1.0) {
        v.push(Violation::ExponentBelowOne { p: problem.p });
    }
    let (m, n) = (problem.kernel.n_atoms(), problem.data.len());
    let c = &problem.cost;
    if c.nrows() != m || c.ncols() != n {
        v.push(Violation::CostShape {
            rows: c.nrows(),
            cols: c.ncols(),
            expected_rows: m,
            expected_cols: n,
        });
    } else {
        for ((i, j), &value) in indexed(c) {
            if !(value.is_finite() && value >= 0.0) {
                v.push(Violation::CostEntry { row: i, col: j, value });
            }
        }
    }
    ValidationReport { violations: v }
}

/// Image of `sigma` under the kernel: weights `R sigma` on the kernel atoms.
pub fn push_forward(sigma: &[f64], kernel: &KernelMatrix) -> Result<DiscreteMeasure> {
    if sigma.len() != kernel.n_sources() {
        return Err(Error::DimensionMismatch {
            context: "push_forward sigma",
            expected: kernel.n_sources(),
            found: sigma.len(),
        });
    }
    if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidMeasure("sigma has a negative or non-finite entry".into()));
    }
    let sum: f64 = sigma.iter().sum();
    if (sum - 1.0).abs() > RENORMALIZE_TOL {
        return Err(Error::NotNormalized { sum });
    }
    let r = kernel.matrix();
    let mut weights = vec![0.0; kernel.n_atoms()];
    for (k, &s) in sigma.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        for (w, rik) in weights.iter_mut().zip(r.column(k).iter()) {
            *w += rik * s;
        }
    }
    DiscreteMeasure::from_raw(kernel.atoms().clone(), weights)
}

/// `C_ij = |a_i - b_j|^p` with the Euclidean norm.
pub fn cost_matrix(a: &PointSet, b: &PointSet, p: f64) -> Result<DMatrix<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "cost matrix atoms",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::param("p", format!("cost exponent must be >= 1, got {p}")));
    }
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
        let sq: f64 = a
            .point(i)
            .iter()
            .zip(b.point(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        if p == 2.0 {
            sq
        } else {
            sq.sqrt().powf(p)
        }
    }))
}
