//! Reference computations used to verify the factorized implementations.
//!
//! Everything here is written against first principles (elementwise kernel
//! evaluation, LU inverses, explicit Kronecker products) and deliberately
//! shares no code path with the Cholesky-based model code.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::coregion::{CoregionalizationTerm, MultiTaskKernelSpec};
use crate::kernel::{kernel_eval, ScalarKernelSpec};

fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

/// `W Wᵀ + diag(γ)` by explicit summation.
pub fn coregionalization_matrix(term: &CoregionalizationTerm) -> DMatrix<f64> {
    let w = &term.loadings;
    let gamma = term.task_variances();
    let d = w.nrows();
    DMatrix::from_fn(d, d, |i, j| {
        let mut s = 0.0;
        for r in 0..w.ncols() {
            s += w[(i, r)] * w[(j, r)];
        }
        if i == j {
            s += gamma[i];
        }
        s
    })
}

fn elementwise_gram(kernel: &ScalarKernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        kernel_eval(kernel, &row(a, i), &row(b, j)).expect("dimension checked by caller")
    })
}

/// `Σ_q B_q ⊗ K_q(X, X)` for isotopic inputs `x`.
pub fn kronecker_joint_covariance(spec: &MultiTaskKernelSpec, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() * spec.num_tasks;
    let mut out = DMatrix::zeros(n, n);
    for term in &spec.terms {
        out += coregionalization_matrix(term).kronecker(&elementwise_gram(&term.kernel, x, x));
    }
    out
}

/// Mean and covariance of `f* | y` under a zero-mean joint Gaussian whose
/// first `n_train` coordinates are observed. Uses an LU inverse.
pub fn condition_dense(joint: &DMatrix<f64>, n_train: usize, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = joint.nrows();
    let m = n - n_train;
    let s_tt = joint.view((0, 0), (n_train, n_train)).into_owned();
    let s_st = joint.view((n_train, 0), (m, n_train)).into_owned();
    let s_ss = joint.view((n_train, n_train), (m, m)).into_owned();
    let inv = s_tt.try_inverse().expect("training covariance must be invertible");
    let gain = &s_st * inv;
    let mean = &gain * y;
    let cov = s_ss - &gain * s_st.transpose();
    (mean, cov)
}

/// Posterior of a single-task GP by dense conditioning of the joint
/// `(N + M)`-point covariance.
pub fn dense_gp_posterior(
    kernel: &ScalarKernelSpec,
    noise_variance: f64,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    xstar: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let mut all = DMatrix::zeros(n + xstar.nrows(), x.ncols());
    all.view_mut((0, 0), x.shape()).copy_from(x);
    all.view_mut((n, 0), xstar.shape()).copy_from(xstar);
    let mut joint = elementwise_gram(kernel, &all, &all);
    for i in 0..n {
        joint[(i, i)] += noise_variance;
    }
    condition_dense(&joint, n, y)
}

/// A labelled observation point `(task, x)`.
pub type TaskPoint = (usize, Vec<f64>);

/// Multi-task prior covariance between labelled points, entry by entry.
pub fn multitask_covariance(spec: &MultiTaskKernelSpec, a: &[TaskPoint], b: &[TaskPoint]) -> DMatrix<f64> {
    let bs: Vec<DMatrix<f64>> = spec.terms.iter().map(coregionalization_matrix).collect();
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        let (da, xa) = &a[i];
        let (db, xb) = &b[j];
        spec.terms
            .iter()
            .zip(&bs)
            .map(|(t, bm)| bm[(*da, *db)] * kernel_eval(&t.kernel, xa, xb).expect("dimension"))
            .sum()
    })
}

/// Multi-task posterior at `query` (all for one task or mixed) by dense
/// conditioning over the full labelled joint covariance.
pub fn dense_mtgp_posterior(
    spec: &MultiTaskKernelSpec,
    noise_variances: &[f64],
    train: &[TaskPoint],
    y: &DVector<f64>,
    query: &[TaskPoint],
) -> (DVector<f64>, DMatrix<f64>) {
    let all: Vec<TaskPoint> = train.iter().chain(query).cloned().collect();
    let mut joint = multitask_covariance(spec, &all, &all);
    for (i, (d, _)) in train.iter().enumerate() {
        joint[(i, i)] += noise_variances[*d];
    }
    condition_dense(&joint, train.len(), y)
}

/// `log N(y | 0, cov)` via LU determinant and inverse.
pub fn dense_log_density(cov: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let inv = cov.clone().try_inverse().expect("covariance must be invertible");
    let quad = y.dot(&(&inv * y));
    -0.5 * quad - 0.5 * cov.determinant().ln() - 0.5 * n * (2.0 * PI).ln()
}

/// Central finite-difference gradient of a scalar function.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    let mut p = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}
