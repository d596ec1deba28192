use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// The constraint `B = [Id_m, -R]` and the orthogonal projector onto its
/// kernel.
///
/// `ker B = { [R s; s] : s in R^L }` is spanned by the columns of
/// `N = [R; Id_L]`. A thin QR factorization `N = Q T` gives an orthonormal
/// basis, so the projector `Id - B^T (B B^T)^{-1} B` equals `Q Q^T`. Only `Q`
/// is kept: applying it costs `O((m + L) L)` instead of `O((m + L)^2)`.
#[derive(Debug, Clone)]
pub struct ConstraintOperator {
    m: usize,
    l: usize,
    kernel: DMatrix<f64>,
    basis: DMatrix<f64>,
}

impl ConstraintOperator {
    pub fn new(kernel: &DMatrix<f64>) -> Result<Self> {
        let (m, l) = kernel.shape();
        if m == 0 || l == 0 {
            return Err(Error::param("kernel", "empty kernel matrix"));
        }
        let mut stacked = DMatrix::zeros(m + l, l);
        stacked.view_mut((0, 0), (m, l)).copy_from(kernel);
        for k in 0..l {
            stacked[(m + k, k)] = 1.0;
        }
        let basis = stacked.qr().q();
        Ok(Self {
            m,
            l,
            kernel: kernel.clone(),
            basis,
        })
    }

    /// Number of kernel atoms `m`.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of source points `L`.
    pub fn l(&self) -> usize {
        self.l
    }

    /// Length `m + L` of the vectors this operator acts on.
    pub fn len(&self) -> usize {
        self.m + self.l
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "constraint operator input",
                expected: self.len(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `B x = x[..m] - R x[m..]`.
    pub fn apply_b(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut out = x[..self.m].to_vec();
        for (k, &s) in x[self.m..].iter().enumerate() {
            for (o, r) in out.iter_mut().zip(self.kernel.column(k).iter()) {
                *o -= r * s;
            }
        }
        Ok(out)
    }

    /// `||B x||_inf`.
    pub fn residual(&self, x: &[f64]) -> Result<f64> {
        Ok(self.apply_b(x)?.iter().fold(0.0, |acc, v| acc.max(v.abs())))
    }

    /// Orthogonal projection of `x` onto `ker B`.
    pub fn orth_project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut out = vec![0.0; self.len()];
        let mut coef = vec![0.0; self.l];
        self.project_into(x, &mut out, &mut coef);
        Ok(out)
    }

    /// Allocation-free projection; `coef` must have length `L`.
    pub(crate) fn project_into(&self, x: &[f64], out: &mut [f64], coef: &mut [f64]) {
        for (c, q) in coef.iter_mut().zip(self.basis.column_iter()) {
            *c = q.as_slice().iter().zip(x).map(|(a, b)| a * b).sum();
        }
        out.fill(0.0);
        for (c, q) in coef.iter().zip(self.basis.column_iter()) {
            for (o, a) in out.iter_mut().zip(q.as_slice()) {
                *o += c * a;
            }
        }
    }

    /// Dense `(m+L) x (m+L)` projector `Q Q^T`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Dense `m x (m+L)` constraint matrix `[Id_m, -R]`.
    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.m, self.len());
        for i in 0..self.m {
            b[(i, i)] = 1.0;
        }
        b.view_mut((0, self.m), (self.m, self.l)).copy_from(&(-&self.kernel));
        b
    }

    /// A point of `ker B` built from source weights `s`: `[R s; s]`.
    pub fn lift(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.l {
            return Err(Error::DimensionMismatch {
                context: "lift source weights",
                expected: self.l,
                found: s.len(),
            });
        }
        let rs = &self.kernel * DVector::from_column_slice(s);
        Ok(rs.iter().copied().chain(s.iter().copied()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_kernel(m: usize, l: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut r = DMatrix::from_fn(m, l, |_, _| rng.random::<f64>());
        for mut col in r.column_iter_mut() {
            let s = col.sum();
            col /= s;
        }
        r
    }

    #[test]
    fn projector_is_idempotent_and_symmetric() {
        let op = ConstraintOperator::new(&random_kernel(6, 3, 1)).unwrap();
        let p = op.projector();
        let p2 = &p * &p;
        assert!((&p2 - &p).amax() <= 1e-10);
        assert!((&p - p.transpose()).amax() <= 1e-12);
        // matches Id - B^T (B B^T)^{-1} B
        let b = op.constraint_matrix();
        let bbt = (&b * b.transpose()).try_inverse().unwrap();
        let other = DMatrix::identity(9, 9) - b.transpose() * bbt * &b;
        assert!((&other - &p).amax() <= 1e-10);
    }

    #[test]
    fn range_is_in_kernel() {
        use rand::{Rng, SeedableRng};
        let op = ConstraintOperator::new(&random_kernel(5, 4, 2)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: Vec<f64> = (0..9).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y = op.orth_project(&x).unwrap();
            assert!(op.residual(&y).unwrap() <= 1e-10);
            // x - y is orthogonal to ker B
            for k in 0..4 {
                let mut s = vec![0.0; 4];
                s[k] = 1.0;
                let v = op.lift(&s).unwrap();
                let dot: f64 = x.iter().zip(&y).zip(&v).map(|((a, b), c)| (a - b) * c).sum();
                assert!(dot.abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn kernel_points_are_fixed() {
        let op = ConstraintOperator::new(&random_kernel(4, 2, 9)).unwrap();
        let x = op.lift(&[0.3, -1.2]).unwrap();
        let y = op.orth_project(&x).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn diagonal_line_projection() {
        let op = ConstraintOperator::new(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        let y = op.orth_project(&[1.0, 4.0]).unwrap();
        assert!((y[0] - 2.5).abs() < 1e-14 && (y[1] - 2.5).abs() < 1e-14);
    }

    #[test]
    fn length_is_checked() {
        let op = ConstraintOperator::new(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(op.orth_project(&[1.0]).is_err());
    }
}
