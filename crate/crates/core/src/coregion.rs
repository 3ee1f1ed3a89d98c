//! Coregionalization: task covariance matrices `B = W Wᵀ + diag(γ)` and the
//! matrix-valued kernel `K(x, x') = Σ_q B_q k_q(x, x')` assembled over
//! heterotopic task inputs.

use nalgebra::DMatrix;

use crate::data::MultiTaskDataset;
use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, ScalarKernelSpec};

/// One latent component: loadings `W` (D×R), optional task-specific
/// variances `γ` stored as logs, and the latent input-space kernel.
///
/// `log_task_variances == None` pins `γ ≡ 0` (the rank-`R` SLFM form).
#[derive(Debug, Clone, PartialEq)]
pub struct CoregionalizationTerm {
    pub loadings: DMatrix<f64>,
    pub log_task_variances: Option<Vec<f64>>,
    pub kernel: ScalarKernelSpec,
}

impl CoregionalizationTerm {
    pub fn new(loadings: DMatrix<f64>, task_variances: Option<&[f64]>, kernel: ScalarKernelSpec) -> Result<Self> {
        if loadings.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("loadings must be finite".into()));
        }
        let log_task_variances = match task_variances {
            None => None,
            Some(g) => {
                if g.len() != loadings.nrows() {
                    return Err(Error::shape(format!(
                        "{} task variances for {} tasks",
                        g.len(),
                        loadings.nrows()
                    )));
                }
                if let Some(v) = g.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                    return Err(Error::InvalidParameter(format!(
                        "task variance must be non-negative, got {v}"
                    )));
                }
                Some(g.iter().map(|v| v.ln()).collect())
            }
        };
        Ok(CoregionalizationTerm {
            loadings,
            log_task_variances,
            kernel,
        })
    }

    /// Rank-one term `B = w wᵀ`.
    pub fn rank_one(w: &[f64], kernel: ScalarKernelSpec) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(w.len(), 1, w), None, kernel)
    }

    pub fn num_tasks(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn rank(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn task_variances(&self) -> Vec<f64> {
        match &self.log_task_variances {
            Some(g) => g.iter().map(|v| v.exp()).collect(),
            None => vec![0.0; self.num_tasks()],
        }
    }
}

/// `W Wᵀ + diag(γ)`.
pub fn build_b(term: &CoregionalizationTerm) -> DMatrix<f64> {
    let w = &term.loadings;
    let mut b = w * w.transpose();
    for (d, g) in term.task_variances().into_iter().enumerate() {
        b[(d, d)] += g;
    }
    // Symmetrize: the product is symmetric up to summation order only.
    let n = b.nrows();
    for i in 0..n {
        for j in 0..i {
            b[(j, i)] = b[(i, j)];
        }
    }
    b
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskKernelSpec {
    pub num_tasks: usize,
    pub terms: Vec<CoregionalizationTerm>,
}

impl MultiTaskKernelSpec {
    pub fn new(num_tasks: usize, terms: Vec<CoregionalizationTerm>) -> Result<Self> {
        if num_tasks == 0 {
            return Err(Error::InvalidParameter("need at least one task".into()));
        }
        if terms.is_empty() {
            return Err(Error::InvalidParameter(
                "need at least one coregionalization term".into(),
            ));
        }
        let p = terms[0].kernel.input_dim();
        for (q, t) in terms.iter().enumerate() {
            if t.num_tasks() != num_tasks {
                return Err(Error::shape(format!(
                    "term {q} has {} loading rows, expected {num_tasks}",
                    t.num_tasks()
                )));
            }
            if t.kernel.input_dim() != p {
                return Err(Error::shape(format!(
                    "term {q} kernel has input dimension {}, expected {p}",
                    t.kernel.input_dim()
                )));
            }
        }
        Ok(MultiTaskKernelSpec { num_tasks, terms })
    }

    /// One indicator term per task (`B_q = e_q e_qᵀ`): the tasks share nothing.
    pub fn independent(kernels: Vec<ScalarKernelSpec>) -> Result<Self> {
        let d = kernels.len();
        let terms = kernels
            .into_iter()
            .enumerate()
            .map(|(q, k)| {
                let mut w = vec![0.0; d];
                w[q] = 1.0;
                CoregionalizationTerm::rank_one(&w, k)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(d, terms)
    }

    pub fn input_dim(&self) -> usize {
        self.terms[0].kernel.input_dim()
    }

    pub fn is_slfm(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.rank() == 1 && t.log_task_variances.is_none())
    }

    pub fn coregionalization_matrices(&self) -> Vec<DMatrix<f64>> {
        self.terms.iter().map(build_b).collect()
    }
}

fn check_task(spec: &MultiTaskKernelSpec, d: usize) -> Result<()> {
    if d >= spec.num_tasks {
        return Err(Error::shape(format!(
            "task index {d} out of range for {} tasks",
            spec.num_tasks
        )));
    }
    Ok(())
}

pub(crate) fn cross_block_with(
    spec: &MultiTaskKernelSpec,
    bs: &[DMatrix<f64>],
    d: usize,
    d2: usize,
    x: &DMatrix<f64>,
    x2: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(x.nrows(), x2.nrows());
    for (term, b) in spec.terms.iter().zip(bs) {
        let coef = b[(d, d2)];
        if coef == 0.0 {
            continue;
        }
        let k = kernel_matrix(&term.kernel, x, x2)?;
        out.zip_apply(&k, |o, kv| *o += coef * kv);
    }
    Ok(out)
}

/// Covariance between task `d` at the rows of `x` and task `d2` at the rows of `x2`.
pub fn cross_covariance_block(
    spec: &MultiTaskKernelSpec,
    d: usize,
    d2: usize,
    x: &DMatrix<f64>,
    x2: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_task(spec, d)?;
    check_task(spec, d2)?;
    let bs = spec.coregionalization_matrices();
    cross_block_with(spec, &bs, d, d2, x, x2)
}

/// Joint prior covariance of all observations, task-major.
pub fn assemble_joint_covariance(spec: &MultiTaskKernelSpec, dataset: &MultiTaskDataset) -> Result<DMatrix<f64>> {
    if dataset.num_tasks() != spec.num_tasks {
        return Err(Error::shape(format!(
            "dataset has {} tasks, kernel has {}",
            dataset.num_tasks(),
            spec.num_tasks
        )));
    }
    if dataset.input_dim() != spec.input_dim() {
        return Err(Error::shape(format!(
            "dataset input dimension {} does not match kernel dimension {}",
            dataset.input_dim(),
            spec.input_dim()
        )));
    }
    let bs = spec.coregionalization_matrices();
    let n = dataset.total_len();
    let offsets = dataset.offsets();
    let mut out = DMatrix::zeros(n, n);
    for d in 0..spec.num_tasks {
        for d2 in 0..=d {
            let block = cross_block_with(spec, &bs, d, d2, dataset.inputs(d), dataset.inputs(d2))?;
            let (r, c) = (offsets[d], offsets[d2]);
            out.view_mut((r, c), block.shape()).copy_from(&block);
            if d != d2 {
                out.view_mut((c, r), (block.ncols(), block.nrows()))
                    .copy_from(&block.transpose());
            }
        }
    }
    Ok(out)
}
