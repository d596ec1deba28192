//! Log-sum-exp reductions shared by the Sinkhorn-type solvers.

use nalgebra::DMatrix;

/// `log(sum(exp(x)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `out[j] = LSE_i(g[i, j] + shift[i])`.
pub fn column_lse(g: &DMatrix<f64>, shift: &[f64], out: &mut [f64]) {
    debug_assert_eq!(g.nrows(), shift.len());
    debug_assert_eq!(g.ncols(), out.len());
    for (o, col) in out.iter_mut().zip(g.column_iter()) {
        let col = col.as_slice();
        let mut max = f64::NEG_INFINITY;
        for (a, s) in col.iter().zip(shift) {
            max = max.max(a + s);
        }
        if !max.is_finite() {
            *o = max;
            continue;
        }
        let mut sum = 0.0;
        for (a, s) in col.iter().zip(shift) {
            sum += (a + s - max).exp();
        }
        *o = max + sum.ln();
    }
}

/// `out[i] = LSE_j(g[i, j] + shift[j])`, two streaming passes over the
/// column-major storage.
pub fn row_lse(g: &DMatrix<f64>, shift: &[f64], out: &mut [f64]) {
    debug_assert_eq!(g.ncols(), shift.len());
    debug_assert_eq!(g.nrows(), out.len());
    let mut max = vec![f64::NEG_INFINITY; g.nrows()];
    for (col, s) in g.column_iter().zip(shift) {
        for (m, a) in max.iter_mut().zip(col.as_slice()) {
            *m = m.max(a + s);
        }
    }
    let mut sum = vec![0.0; g.nrows()];
    for (col, s) in g.column_iter().zip(shift) {
        for ((acc, m), a) in sum.iter_mut().zip(&max).zip(col.as_slice()) {
            if m.is_finite() {
                *acc += (a + s - m).exp();
            }
        }
    }
    for ((o, m), acc) in out.iter_mut().zip(&max).zip(&sum) {
        *o = if m.is_finite() { m + acc.ln() } else { *m };
    }
}
