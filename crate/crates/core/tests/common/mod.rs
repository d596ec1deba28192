//! Independent reference solvers shared by the integration and acceptance
//! tests. Nothing here goes through the Sinkhorn or Douglas-Rachford code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use otunfold::measures::{DiscreteMeasure, KernelMatrix, PointSet, UnfoldingProblem};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random 1D problem with a dense positive kernel, atoms in `[0, 1]` and
/// strictly positive data weights.
pub fn random_problem(rng: &mut ChaCha8Rng, m: usize, l: usize, n: usize) -> UnfoldingProblem {
    let atoms: Vec<f64> = (0..m).map(|_| rng.random()).collect();
    let sources: Vec<f64> = (0..l).map(|_| rng.random()).collect();
    let data: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let mut r = DMatrix::from_fn(m, l, |_, _| rng.random_range(0.05..1.0));
    for mut col in r.column_iter_mut() {
        let s = col.sum();
        col /= s;
    }
    let nu = random_simplex(rng, n);
    let kernel = KernelMatrix::new(r, PointSet::from_scalars(&atoms), PointSet::from_scalars(&sources)).unwrap();
    UnfoldingProblem::new(kernel, DiscreteMeasure::new(PointSet::from_scalars(&data), nu).unwrap(), 2.0).unwrap()
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// `-sum(A log A - A)` with `0 log 0 = 0`.
pub fn entropy(values: impl IntoIterator<Item = f64>) -> f64 {
    -values
        .into_iter()
        .map(|a| if a > 0.0 { a * a.ln() - a } else { 0.0 })
        .sum::<f64>()
}

/// `<C, Gamma> - eps H(sigma) - eps H(Gamma)`.
pub fn objective(cost: &DMatrix<f64>, gamma: &DMatrix<f64>, sigma: &[f64], eps: f64) -> f64 {
    gamma.component_mul(cost).sum() - eps * entropy(sigma.iter().copied()) - eps * entropy(gamma.iter().copied())
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub gamma: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
}

/// Minimizes the smooth dual
///
/// `G(phi, psi) = sum_ij exp(phi_i + psi_j - C_ij/eps) + sum_k exp(-(R^T phi)_k) - <psi, nu>`
///
/// by damped Newton. The primal solution is `Gamma_ij = exp(phi_i + psi_j - C_ij/eps)`
/// and `sigma = exp(-R^T phi)`.
pub fn newton_dual(problem: &UnfoldingProblem, eps: f64) -> DualSolution {
    let r = problem.kernel.matrix();
    let nu = problem.data.weights();
    let (m, n) = (problem.m(), problem.n());
    let g = problem.cost.map(|c| -c / eps);

    let primal = |x: &DVector<f64>| {
        let gamma = DMatrix::from_fn(m, n, |i, j| (x[i] + x[m + j] + g[(i, j)]).exp());
        let rt_phi = r.tr_mul(&x.rows(0, m).into_owned());
        let sigma: Vec<f64> = rt_phi.iter().map(|v| (-v).exp()).collect();
        (gamma, sigma)
    };
    let value = |x: &DVector<f64>| {
        let (gamma, sigma) = primal(x);
        gamma.sum() + sigma.iter().sum::<f64>() - (0..n).map(|j| x[m + j] * nu[j]).sum::<f64>()
    };

    let mut x = DVector::zeros(m + n);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..500 {
        let (gamma, sigma) = primal(&x);
        let rs = r * DVector::from_column_slice(&sigma);
        let row = gamma.column_sum();
        let col = gamma.row_sum();
        let mut grad = DVector::zeros(m + n);
        for i in 0..m {
            grad[i] = row[i] - rs[i];
        }
        for j in 0..n {
            grad[m + j] = col[j] - nu[j];
        }
        grad_norm = grad.amax();
        if grad_norm < 1e-15 {
            break;
        }
        let mut h = DMatrix::zeros(m + n, m + n);
        let rsr = r * DMatrix::from_diagonal(&DVector::from_column_slice(&sigma)) * r.transpose();
        h.view_mut((0, 0), (m, m)).copy_from(&rsr);
        for i in 0..m {
            h[(i, i)] += row[i];
        }
        for j in 0..n {
            h[(m + j, m + j)] = col[j];
        }
        h.view_mut((0, m), (m, n)).copy_from(&gamma);
        h.view_mut((m, 0), (n, m)).copy_from(&gamma.transpose());
        let step = h.cholesky().expect("dual Hessian is positive definite").solve(&grad);

        let f0 = value(&x);
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let trial = &x - t * &step;
            let f1 = value(&trial);
            if f1 <= f0 - 1e-4 * t * slope || t < 1e-12 {
                x = trial;
                break;
            }
            t *= 0.5;
        }
    }
    let (gamma, sigma) = primal(&x);
    let objective = objective(&problem.cost, &gamma, &sigma, eps);
    DualSolution {
        phi: x.rows(0, m).iter().copied().collect(),
        psi: x.rows(m, n).iter().copied().collect(),
        gamma,
        sigma,
        objective,
        gradient_norm: grad_norm,
    }
}

/// KL projection of a positive `w` onto `{x : x[..m] = R x[m..]}` by Newton
/// on the dual `f -> sum_r w_r exp((B^T f)_r)` with `B = [Id, -R]`.
pub fn kl_project_oracle(r: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    let (m, l) = r.shape();
    let mut b = DMatrix::zeros(m, m + l);
    b.view_mut((0, 0), (m, m)).fill_with_identity();
    b.view_mut((0, m), (m, l)).copy_from(&(-r));
    let wv = DVector::from_column_slice(w);
    let point = |f: &DVector<f64>| {
        let e = b.tr_mul(f);
        DVector::from_fn(m + l, |k, _| wv[k] * e[k].exp())
    };
    let mut f = DVector::zeros(m);
    for _ in 0..200 {
        let x = point(&f);
        let grad = &b * &x;
        if grad.amax() < 1e-16 {
            break;
        }
        let h = &b * DMatrix::from_diagonal(&x) * b.transpose();
        let step = h.cholesky().expect("B diag(x) B^T is positive definite").solve(&grad);
        let f0 = x.sum();
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let trial = &f - t * &step;
            if point(&trial).sum() <= f0 - 1e-4 * t * slope || t < 1e-12 {
                f = trial;
                break;
            }
            t *= 0.5;
        }
    }
    point(&f).iter().copied().collect()
}

/// KL projection onto matrices with column sums `b`.
pub fn proj_columns(p: &DMatrix<f64>, b: &[f64]) -> DMatrix<f64> {
    let mut out = p.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let s = col.sum();
        col *= b[j] / s;
    }
    out
}

/// KL projection onto matrices whose row sums lie in `ker [Id, -R]`.
pub fn proj_rows(p: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let rows: Vec<f64> = p.column_sum().iter().copied().collect();
    let z = kl_project_oracle(r, &rows);
    let mut out = p.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= z[i] / rows[i];
    }
    out
}

/// `(u0, v0)` for the plan `P` with `P = diag(u) K~ diag(v)`: the Gamma block
/// and sigma column of the dense block matrix.
pub fn split_plan(p: &DMatrix<f64>, m: usize, n: usize) -> (DMatrix<f64>, Vec<f64>) {
    let gamma = p.view((0, 0), (m, n)).into_owned();
    let sigma = p.view((m, n), (p.nrows() - m, 1)).iter().copied().collect();
    (gamma, sigma)
}
