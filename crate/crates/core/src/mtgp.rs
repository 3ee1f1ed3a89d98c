//! Multi-task GP over heterotopic data: joint prior, task-specific noise,
//! exact posterior and the log marginal likelihood with analytic gradients.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::coregion::{assemble_joint_covariance, cross_block_with, MultiTaskKernelSpec};
use crate::data::{MultiTaskDataset, Standardization};
use crate::error::{Error, Result};
use crate::gp::{FitOptions, PosteriorPrediction};
use crate::kernel::kernel_matrix_with_grad;
use crate::linalg::{factorize, Factor, Jitter};

#[derive(Debug, Clone, PartialEq)]
pub struct MtgpHyperparameters {
    pub kernel: MultiTaskKernelSpec,
    pub log_noise_variances: Vec<f64>,
}

impl MtgpHyperparameters {
    pub fn new(kernel: MultiTaskKernelSpec, noise_variances: &[f64]) -> Result<Self> {
        if noise_variances.len() != kernel.num_tasks {
            return Err(Error::shape(format!(
                "{} noise variances for {} tasks",
                noise_variances.len(),
                kernel.num_tasks
            )));
        }
        if let Some(v) = noise_variances.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be non-negative and finite, got {v}"
            )));
        }
        Ok(MtgpHyperparameters {
            kernel,
            log_noise_variances: noise_variances.iter().map(|v| v.ln()).collect(),
        })
    }

    pub fn noise_variances(&self) -> Vec<f64> {
        self.log_noise_variances.iter().map(|v| v.exp()).collect()
    }

    pub fn num_tasks(&self) -> usize {
        self.kernel.num_tasks
    }

    fn check_dataset(&self, dataset: &MultiTaskDataset) -> Result<()> {
        if dataset.num_tasks() != self.kernel.num_tasks {
            return Err(Error::shape(format!(
                "dataset has {} tasks, kernel has {}",
                dataset.num_tasks(),
                self.kernel.num_tasks
            )));
        }
        if dataset.input_dim() != self.kernel.input_dim() {
            return Err(Error::shape(format!(
                "dataset input dimension {} does not match kernel dimension {}",
                dataset.input_dim(),
                self.kernel.input_dim()
            )));
        }
        if self.log_noise_variances.len() != self.kernel.num_tasks {
            return Err(Error::shape("noise vector length differs from task count"));
        }
        Ok(())
    }

    /// `K(X,X) + blockdiag(σ_d² I)`.
    pub fn noisy_joint_covariance(&self, dataset: &MultiTaskDataset) -> Result<DMatrix<f64>> {
        self.check_dataset(dataset)?;
        let mut k = assemble_joint_covariance(&self.kernel, dataset)?;
        let noise = self.noise_variances();
        for (i, d) in dataset.task_of_rows().into_iter().enumerate() {
            k[(i, i)] += noise[d];
        }
        Ok(k)
    }
}

/// Gradient of the log marginal likelihood, shaped like the hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MtgpGradient {
    pub terms: Vec<TermGradient>,
    pub log_noise_variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermGradient {
    /// `[log ℓ_1, …, log ℓ_P, log σ_f²]`
    pub kernel: Vec<f64>,
    pub loadings: DMatrix<f64>,
    pub log_task_variances: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MtgpModel {
    pub hyper: MtgpHyperparameters,
    pub standardization: Vec<Standardization>,
    dataset: MultiTaskDataset,
    scaled_targets: DVector<f64>,
    factor: Factor,
    alpha: DVector<f64>,
}

fn standardize(dataset: &MultiTaskDataset, on: bool) -> (Vec<Standardization>, MultiTaskDataset) {
    if !on {
        return (vec![Standardization::IDENTITY; dataset.num_tasks()], dataset.clone());
    }
    let s: Vec<Standardization> = (0..dataset.num_tasks())
        .map(|d| Standardization::fit(dataset.targets(d).as_slice()))
        .collect();
    let scaled = dataset.map_targets(|d, v| s[d].forward(v));
    (s, scaled)
}

/// Per-task standardization statistics as `fit` would compute them.
pub fn standardize_dataset(dataset: &MultiTaskDataset) -> (Vec<Standardization>, MultiTaskDataset) {
    standardize(dataset, true)
}

impl MtgpModel {
    pub fn fit(hyper: MtgpHyperparameters, dataset: MultiTaskDataset, options: &FitOptions) -> Result<Self> {
        hyper.check_dataset(&dataset)?;
        let (standardization, scaled) = standardize(&dataset, options.standardize);
        let k = hyper.noisy_joint_covariance(&scaled)?;
        let factor = factorize(&k, &options.jitter)?;
        let scaled_targets = scaled.stacked_targets();
        let alpha = factor.solve(&scaled_targets);
        Ok(MtgpModel {
            hyper,
            standardization,
            dataset,
            scaled_targets,
            factor,
            alpha,
        })
    }

    pub fn dataset(&self) -> &MultiTaskDataset {
        &self.dataset
    }

    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// Joint weight vector `(K + Σ)⁻¹ y` over standardized targets.
    pub fn weights(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let y = &self.scaled_targets;
        -0.5 * y.dot(&self.alpha) - self.factor.half_log_det() - 0.5 * y.len() as f64 * (2.0 * PI).ln()
    }

    /// Posterior of the latent function of `task` at the rows of `xstar`.
    pub fn predict(&self, task: usize, xstar: &DMatrix<f64>, full_covariance: bool) -> Result<PosteriorPrediction> {
        let spec = &self.hyper.kernel;
        if task >= spec.num_tasks {
            return Err(Error::shape(format!(
                "task index {task} out of range for {} tasks",
                spec.num_tasks
            )));
        }
        if xstar.ncols() != spec.input_dim() {
            return Err(Error::shape(format!(
                "query has {} columns, model expects {}",
                xstar.ncols(),
                spec.input_dim()
            )));
        }
        let bs = spec.coregionalization_matrices();
        let m = xstar.nrows();
        let offsets = self.dataset.offsets();
        let mut cross = DMatrix::zeros(m, self.dataset.total_len());
        for (d, &offset) in offsets.iter().enumerate().take(spec.num_tasks) {
            let n_d = self.dataset.task_len(d);
            if n_d == 0 {
                continue;
            }
            let blk = cross_block_with(spec, &bs, task, d, xstar, self.dataset.inputs(d))?;
            cross.view_mut((0, offset), (m, n_d)).copy_from(&blk);
        }
        let mean = &cross * &self.alpha;
        let v = self.factor.solve_lower(&cross.transpose());
        let prior_var: f64 = spec
            .terms
            .iter()
            .zip(&bs)
            .map(|(t, b)| b[(task, task)] * t.kernel.signal_variance())
            .sum();
        let variance = DVector::from_iterator(m, v.column_iter().map(|c| (prior_var - c.norm_squared()).max(0.0)));
        let covariance = if full_covariance {
            let mut c = cross_block_with(spec, &bs, task, task, xstar, xstar)? - v.transpose() * &v;
            for i in 0..m {
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
        .unstandardize(&self.standardization[task]))
    }
}

/// Fits with the default options (per-task standardization, default jitter).
pub fn mtgp_fit(kernel: MultiTaskKernelSpec, noise_variances: &[f64], dataset: MultiTaskDataset) -> Result<MtgpModel> {
    MtgpModel::fit(
        MtgpHyperparameters::new(kernel, noise_variances)?,
        dataset,
        &FitOptions::default(),
    )
}

pub fn mtgp_predict(model: &MtgpModel, task: usize, xstar: &DMatrix<f64>) -> Result<PosteriorPrediction> {
    model.predict(task, xstar, false)
}

/// Log marginal likelihood of the dataset targets as given, with gradient.
pub fn mtgp_lml_with_grad(
    hyper: &MtgpHyperparameters,
    dataset: &MultiTaskDataset,
    jitter: &Jitter,
) -> Result<(f64, MtgpGradient)> {
    let k = hyper.noisy_joint_covariance(dataset)?;
    let factor = factorize(&k, jitter)?;
    let y = dataset.stacked_targets();
    let alpha = factor.solve(&y);
    let n = y.len();
    let value = -0.5 * y.dot(&alpha) - factor.half_log_det() - 0.5 * n as f64 * (2.0 * PI).ln();

    let mut a = &alpha * alpha.transpose();
    a -= factor.inverse();

    let tasks = dataset.task_of_rows();
    let d_count = hyper.num_tasks();
    let x = dataset.stacked_inputs();
    let mut terms = Vec::with_capacity(hyper.kernel.terms.len());
    for term in &hyper.kernel.terms {
        let b = crate::coregion::build_b(term);
        let (kq, dkq) = kernel_matrix_with_grad(&term.kernel, &x)?;
        // A ∘ B[t_i, t_j], and S[d, d2] = Σ_{i∈d, j∈d2} A_ij k_q(x_i, x_j)
        let mut ab = DMatrix::zeros(n, n);
        let mut s = DMatrix::zeros(d_count, d_count);
        for j in 0..n {
            for i in 0..n {
                let aij = a[(i, j)];
                ab[(i, j)] = aij * b[(tasks[i], tasks[j])];
                s[(tasks[i], tasks[j])] += aij * kq[(i, j)];
            }
        }
        let kernel = dkq.iter().map(|dk| 0.5 * ab.dot(dk)).collect();
        let loadings = &s * &term.loadings;
        let log_task_variances = term
            .log_task_variances
            .as_ref()
            .map(|lg| lg.iter().enumerate().map(|(d, l)| 0.5 * s[(d, d)] * l.exp()).collect());
        terms.push(TermGradient {
            kernel,
            loadings,
            log_task_variances,
        });
    }
    let noise = hyper.noise_variances();
    let mut log_noise_variances = vec![0.0; d_count];
    for (i, d) in tasks.iter().enumerate() {
        log_noise_variances[*d] += 0.5 * noise[*d] * a[(i, i)];
    }
    Ok((
        value,
        MtgpGradient {
            terms,
            log_noise_variances,
        },
    ))
}

pub fn mtgp_log_marginal_likelihood(
    kernel: &MultiTaskKernelSpec,
    noise_variances: &[f64],
    dataset: &MultiTaskDataset,
) -> Result<(f64, MtgpGradient)> {
    let hyper = MtgpHyperparameters::new(kernel.clone(), noise_variances)?;
    mtgp_lml_with_grad(&hyper, dataset, &Jitter::default())
}
