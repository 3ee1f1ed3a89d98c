//! Stationary scalar kernels on real input vectors.
//!
//! Positive hyperparameters live in log-space; the gradient routines return
//! derivatives with respect to those log-parameters, ordered as
//! `[log ℓ_1, …, log ℓ_P, log σ_f²]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum KernelKind {
    #[default]
    SquaredExponential,
    Matern52,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarKernelSpec {
    pub kind: KernelKind,
    pub log_lengthscales: Vec<f64>,
    pub log_signal_variance: f64,
}

impl ScalarKernelSpec {
    pub fn new(kind: KernelKind, lengthscales: &[f64], signal_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::InvalidParameter("kernel needs at least one lengthscale".into()));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "lengthscale must be positive and finite, got {l}"
            )));
        }
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "signal variance must be positive and finite, got {signal_variance}"
            )));
        }
        Ok(ScalarKernelSpec {
            kind,
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_signal_variance: signal_variance.ln(),
        })
    }

    pub fn squared_exponential(lengthscales: &[f64], signal_variance: f64) -> Result<Self> {
        Self::new(KernelKind::SquaredExponential, lengthscales, signal_variance)
    }

    pub fn matern52(lengthscales: &[f64], signal_variance: f64) -> Result<Self> {
        Self::new(KernelKind::Matern52, lengthscales, signal_variance)
    }

    pub fn input_dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn num_params(&self) -> usize {
        self.log_lengthscales.len() + 1
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    /// Squared scaled distance and the per-dimension scaled squares.
    fn scaled_sq(&self, x: impl Iterator<Item = f64>, x2: impl Iterator<Item = f64>, out: &mut [f64]) -> f64 {
        let mut r2 = 0.0;
        for (((a, b), ll), o) in x.zip(x2).zip(&self.log_lengthscales).zip(out.iter_mut()) {
            let u = (a - b) / ll.exp();
            *o = u * u;
            r2 += *o;
        }
        r2
    }

    fn profile(&self, r2: f64) -> f64 {
        match self.kind {
            KernelKind::SquaredExponential => (-0.5 * r2).exp(),
            KernelKind::Matern52 => {
                let s = SQRT5 * r2.sqrt();
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }

    /// `∂k/∂(u_p²)` divided by σ_f², where `u_p = (x_p − x2_p)/ℓ_p`; the
    /// log-lengthscale derivative is `−2 u_p² · σ_f² · dprofile`.
    fn dprofile_dr2(&self, r2: f64) -> f64 {
        match self.kind {
            KernelKind::SquaredExponential => -0.5 * (-0.5 * r2).exp(),
            KernelKind::Matern52 => {
                let s = SQRT5 * r2.sqrt();
                -(5.0 / 6.0) * (1.0 + s) * (-s).exp()
            }
        }
    }
}

fn check_dim(spec: &ScalarKernelSpec, p: usize, what: &str) -> Result<()> {
    if p != spec.input_dim() {
        return Err(Error::shape(format!(
            "{what} has dimension {p}, kernel expects {}",
            spec.input_dim()
        )));
    }
    Ok(())
}

pub fn kernel_eval(spec: &ScalarKernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    check_dim(spec, x.len(), "first input")?;
    check_dim(spec, x2.len(), "second input")?;
    let mut scratch = vec![0.0; x.len()];
    let r2 = spec.scaled_sq(x.iter().copied(), x2.iter().copied(), &mut scratch);
    Ok(spec.signal_variance() * spec.profile(r2))
}

/// Cross-covariance between the rows of `x` (N×P) and `x2` (M×P).
pub fn kernel_matrix(spec: &ScalarKernelSpec, x: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(spec, x.ncols(), "X")?;
    check_dim(spec, x2.ncols(), "X2")?;
    let sf2 = spec.signal_variance();
    let mut scratch = vec![0.0; x.ncols()];
    Ok(DMatrix::from_fn(x.nrows(), x2.nrows(), |i, j| {
        let r2 = spec.scaled_sq(x.row(i).iter().copied(), x2.row(j).iter().copied(), &mut scratch);
        sf2 * spec.profile(r2)
    }))
}

/// `K(X, X)` together with `∂K/∂θ_j` for every log-parameter.
pub fn kernel_matrix_with_grad(spec: &ScalarKernelSpec, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    check_dim(spec, x.ncols(), "X")?;
    let n = x.nrows();
    let p = x.ncols();
    let sf2 = spec.signal_variance();
    let mut k = DMatrix::zeros(n, n);
    let mut grads = vec![DMatrix::zeros(n, n); p + 1];
    let mut u2 = vec![0.0; p];
    for i in 0..n {
        k[(i, i)] = sf2;
        grads[p][(i, i)] = sf2;
        for j in 0..i {
            let r2 = spec.scaled_sq(x.row(i).iter().copied(), x.row(j).iter().copied(), &mut u2);
            let kij = sf2 * spec.profile(r2);
            let dk = sf2 * spec.dprofile_dr2(r2);
            k[(i, j)] = kij;
            k[(j, i)] = kij;
            for (g, u) in grads.iter_mut().zip(&u2) {
                // d(u_p²)/d(log ℓ_p) = −2 u_p²
                let v = -2.0 * u * dk;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
            grads[p][(i, j)] = kij;
            grads[p][(j, i)] = kij;
        }
    }
    Ok((k, grads))
}

/// `∂K/∂θ_j` for `θ = (log ℓ_1, …, log ℓ_P, log σ_f²)`.
pub fn kernel_matrix_grad(spec: &ScalarKernelSpec, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    if x.nrows() == 0 {
        return Err(Error::shape("kernel gradient needs at least one input"));
    }
    kernel_matrix_with_grad(spec, x).map(|(_, g)| g)
}
