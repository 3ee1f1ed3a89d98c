//! Exact single-task Gaussian process regression.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, kernel_matrix_with_grad, ScalarKernelSpec};
use crate::linalg::{factorize, Factor, Jitter};

/// Controls applied when conditioning a model on data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Standardize targets (per task) before conditioning; predictions are
    /// mapped back to the original units.
    pub standardize: bool,
    pub jitter: Jitter,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            standardize: true,
            jitter: Jitter::default(),
        }
    }
}

impl FitOptions {
    /// Targets used as given, default jitter.
    pub fn raw() -> Self {
        FitOptions {
            standardize: false,
            jitter: Jitter::default(),
        }
    }

    /// Targets used as given and no jitter: the factorized matrix is exactly
    /// the model covariance.
    pub fn exact() -> Self {
        FitOptions {
            standardize: false,
            jitter: Jitter::none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpHyperparameters {
    pub kernel: ScalarKernelSpec,
    pub log_noise_variance: f64,
    /// Constant prior mean (in standardized units when standardization is on).
    pub mean: f64,
}

impl GpHyperparameters {
    pub fn new(kernel: ScalarKernelSpec, noise_variance: f64) -> Result<Self> {
        check_noise(noise_variance)?;
        Ok(GpHyperparameters {
            kernel,
            log_noise_variance: noise_variance.ln(),
            mean: 0.0,
        })
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }
}

fn check_noise(v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be non-negative and finite, got {v}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PosteriorPrediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub covariance: Option<DMatrix<f64>>,
}

impl PosteriorPrediction {
    pub fn stddev(&self) -> DVector<f64> {
        self.variance.map(f64::sqrt)
    }

    pub(crate) fn unstandardize(mut self, s: &Standardization) -> Self {
        self.mean.apply(|m| *m = s.inverse_mean(*m));
        self.variance.apply(|v| *v = s.inverse_variance(*v));
        if let Some(c) = self.covariance.as_mut() {
            c.apply(|v| *v = s.inverse_variance(*v));
        }
        self
    }
}

/// A GP conditioned on training data.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub hyper: GpHyperparameters,
    pub standardization: Standardization,
    x: DMatrix<f64>,
    y: DVector<f64>,
    factor: Factor,
    alpha: DVector<f64>,
}

impl GpModel {
    pub fn fit(hyper: GpHyperparameters, x: DMatrix<f64>, y: DVector<f64>, options: &FitOptions) -> Result<Self> {
        check_training(&hyper.kernel, &x, &y)?;
        check_noise(hyper.noise_variance())?;
        let standardization = if options.standardize {
            Standardization::fit(y.as_slice())
        } else {
            Standardization::IDENTITY
        };
        let ys = y.map(|v| standardization.forward(v));
        let factor = factorize(&noisy_gram(&hyper, &x)?, &options.jitter)?;
        let alpha = factor.solve(&ys.add_scalar(-hyper.mean));
        Ok(GpModel {
            hyper,
            standardization,
            x,
            y,
            factor,
            alpha,
        })
    }

    pub fn training_inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn training_targets(&self) -> &DVector<f64> {
        &self.y
    }

    /// Lower Cholesky factor of `K_XX + σ² I` (plus jitter).
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// `(K_XX + σ² I)⁻¹ (y − m)` in standardized units.
    pub fn weights(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn predict(&self, xstar: &DMatrix<f64>, full_covariance: bool) -> Result<PosteriorPrediction> {
        if xstar.ncols() != self.x.ncols() {
            return Err(Error::shape(format!(
                "query has {} columns, model expects {}",
                xstar.ncols(),
                self.x.ncols()
            )));
        }
        let kernel = &self.hyper.kernel;
        let ks = kernel_matrix(kernel, xstar, &self.x)?;
        let mean = (&ks * &self.alpha).add_scalar(self.hyper.mean);
        let v = self.factor.solve_lower(&ks.transpose());
        let sf2 = kernel.signal_variance();
        let variance = DVector::from_iterator(
            xstar.nrows(),
            v.column_iter().map(|c| (sf2 - c.norm_squared()).max(0.0)),
        );
        let covariance = if full_covariance {
            let mut c = kernel_matrix(kernel, xstar, xstar)? - v.transpose() * &v;
            for i in 0..c.nrows() {
                c[(i, i)] = variance[i];
            }
            Some(c)
        } else {
            None
        };
        Ok(PosteriorPrediction {
            mean,
            variance,
            covariance,
        }
        .unstandardize(&self.standardization))
    }

    /// Log marginal likelihood of the (standardized) training targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let ys = self.y.map(|v| self.standardization.forward(v));
        let r = ys.add_scalar(-self.hyper.mean);
        -0.5 * r.dot(&self.alpha) - self.factor.half_log_det() - 0.5 * r.len() as f64 * (2.0 * PI).ln()
    }
}

fn check_training(kernel: &ScalarKernelSpec, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::shape("need at least one training point"));
    }
    if x.nrows() != y.len() {
        return Err(Error::shape(format!("{} inputs but {} targets", x.nrows(), y.len())));
    }
    if x.ncols() != kernel.input_dim() {
        return Err(Error::shape(format!(
            "inputs have {} columns, kernel expects {}",
            x.ncols(),
            kernel.input_dim()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidDataset("training data contains non-finite values".into()));
    }
    Ok(())
}

fn noisy_gram(hyper: &GpHyperparameters, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut k = kernel_matrix(&hyper.kernel, x, x)?;
    let s2 = hyper.noise_variance();
    for i in 0..k.nrows() {
        k[(i, i)] += s2;
    }
    Ok(k)
}

/// Conditions a GP on `(x, y)` with targets used as given.
pub fn gp_fit(kernel: ScalarKernelSpec, noise_variance: f64, x: DMatrix<f64>, y: DVector<f64>) -> Result<GpModel> {
    GpModel::fit(
        GpHyperparameters::new(kernel, noise_variance)?,
        x,
        y,
        &FitOptions::raw(),
    )
}

pub fn gp_predict(model: &GpModel, xstar: &DMatrix<f64>) -> Result<PosteriorPrediction> {
    model.predict(xstar, false)
}

/// Log marginal likelihood and its gradient over
/// `[log ℓ_1, …, log ℓ_P, log σ_f², log σ²]`, plus `∂/∂mean` last when
/// `with_mean` is set.
pub fn gp_lml_with_grad(
    hyper: &GpHyperparameters,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    jitter: &Jitter,
    with_mean: bool,
) -> Result<(f64, Vec<f64>)> {
    check_training(&hyper.kernel, x, y)?;
    let (mut k, dks) = kernel_matrix_with_grad(&hyper.kernel, x)?;
    let s2 = hyper.noise_variance();
    let n = k.nrows();
    for i in 0..n {
        k[(i, i)] += s2;
    }
    let factor = factorize(&k, jitter)?;
    let r = y.add_scalar(-hyper.mean);
    let alpha = factor.solve(&r);
    let value = -0.5 * r.dot(&alpha) - factor.half_log_det() - 0.5 * n as f64 * (2.0 * PI).ln();

    // ½ tr((ααᵀ − K⁻¹) ∂K)
    let mut a = &alpha * alpha.transpose();
    a -= factor.inverse();
    let mut grad: Vec<f64> = dks.iter().map(|dk| 0.5 * a.dot(dk)).collect();
    grad.push(0.5 * s2 * a.trace());
    if with_mean {
        grad.push(alpha.sum());
    }
    Ok((value, grad))
}

pub fn gp_log_marginal_likelihood(
    kernel: &ScalarKernelSpec,
    noise_variance: f64,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(f64, Vec<f64>)> {
    let hyper = GpHyperparameters::new(kernel.clone(), noise_variance)?;
    gp_lml_with_grad(&hyper, x, y, &Jitter::default(), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::kernel_eval;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn se(l: f64, s: f64) -> ScalarKernelSpec {
        ScalarKernelSpec::squared_exponential(&[l], s).unwrap()
    }

    #[test]
    fn single_point_weights() {
        let m = gp_fit(se(1.0, 1.0), 1e-10, col(&[0.0]), DVector::from_vec(vec![2.0])).unwrap();
        assert!((m.weights()[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn duplicate_inputs_without_noise_or_jitter_fail() {
        let hyper = GpHyperparameters::new(se(1.0, 1.0), 0.0).unwrap();
        let r = GpModel::fit(
            hyper,
            col(&[0.3, 0.3]),
            DVector::from_vec(vec![1.0, 1.0]),
            &FitOptions::exact(),
        );
        assert!(matches!(r, Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn factor_is_lower_with_positive_diagonal() {
        let x = col(&[0.0, 0.3, 0.7, 1.0]);
        let m = gp_fit(
            se(0.4, 1.0),
            0.01,
            x.clone(),
            DVector::from_vec(vec![1.0, -1.0, 0.5, 0.0]),
        )
        .unwrap();
        let l = m.cholesky_factor();
        for i in 0..4 {
            assert!(l[(i, i)] > 0.0);
            for j in i + 1..4 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
        let mut k = kernel_matrix(&se(0.4, 1.0), &x, &x).unwrap();
        for i in 0..4 {
            k[(i, i)] += 0.01;
        }
        let rel = (&l * l.transpose() - &k).norm() / k.norm();
        assert!(rel < 1e-8);
    }

    #[test]
    fn interpolates_training_points() {
        let x = col(&[0.1, 0.4, 0.8]);
        let y = DVector::from_vec(vec![1.0, -0.5, 2.0]);
        let m = gp_fit(se(0.3, 1.0), 1e-10, x.clone(), y.clone()).unwrap();
        let p = gp_predict(&m, &x).unwrap();
        for i in 0..3 {
            assert!((p.mean[i] - y[i]).abs() < 1e-4);
            assert!(p.variance[i] < 1e-4);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let m = gp_fit(se(0.2, 2.5), 0.01, col(&[0.0, 0.5]), DVector::from_vec(vec![3.0, 1.0])).unwrap();
        let p = gp_predict(&m, &col(&[100.0])).unwrap();
        assert!(p.mean[0].abs() < 1e-12);
        assert!((p.variance[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn variance_bounded_by_prior() {
        let k = se(0.3, 1.7);
        let m = gp_fit(
            k.clone(),
            0.05,
            col(&[0.0, 0.2, 0.9]),
            DVector::from_vec(vec![1.0, 2.0, 0.0]),
        )
        .unwrap();
        let q = col(&[0.0, 0.1, 0.5, 2.0]);
        let p = m.predict(&q, true).unwrap();
        let cov = p.covariance.as_ref().unwrap();
        for i in 0..4 {
            assert!(p.variance[i] <= kernel_eval(&k, &[q[(i, 0)]], &[q[(i, 0)]]).unwrap() + 1e-15);
            assert_eq!(cov[(i, i)], p.variance[i]);
        }
    }

    #[test]
    fn shape_mismatch_on_predict() {
        let m = gp_fit(se(1.0, 1.0), 0.1, col(&[0.0]), DVector::from_vec(vec![1.0])).unwrap();
        assert!(matches!(
            gp_predict(&m, &DMatrix::zeros(1, 2)),
            Err(Error::InputShape(_))
        ));
    }

    #[test]
    fn lml_single_point() {
        // k(x,x) + σ² = 1
        let (v, _) = gp_log_marginal_likelihood(&se(1.0, 0.5), 0.5, &col(&[0.0]), &DVector::zeros(1)).unwrap();
        assert!((v + 0.5 * (2.0 * PI).ln()).abs() < 1e-7);
        assert!((v + 0.91894).abs() < 1e-5);
    }

    #[test]
    fn lml_zero_targets_is_pure_complexity() {
        let x = col(&[0.0, 0.3, 0.5]);
        let k = se(0.5, 1.0);
        let (v, _) = gp_log_marginal_likelihood(&k, 0.1, &x, &DVector::zeros(3)).unwrap();
        let mut km = kernel_matrix(&k, &x, &x).unwrap();
        for i in 0..3 {
            km[(i, i)] += 0.1;
        }
        let expected = -0.5 * km.determinant().ln() - 1.5 * (2.0 * PI).ln();
        assert!((v - expected).abs() < 1e-7);
    }

    #[test]
    fn model_lml_matches_free_function() {
        let x = col(&[0.0, 0.3, 0.5, 0.9]);
        let y = DVector::from_vec(vec![0.2, 1.0, -0.3, 0.4]);
        let hyper = GpHyperparameters::new(se(0.5, 1.2), 0.1).unwrap();
        let m = GpModel::fit(hyper.clone(), x.clone(), y.clone(), &FitOptions::raw()).unwrap();
        let (v, _) = gp_lml_with_grad(&hyper, &x, &y, &Jitter::default(), false).unwrap();
        assert!((m.log_marginal_likelihood() - v).abs() < 1e-12);
    }
}
