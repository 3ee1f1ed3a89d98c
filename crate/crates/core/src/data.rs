//! Heterotopic multi-task datasets and per-task output standardization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-task inputs and targets. Tasks may have different sample counts;
/// observations are vectorized task-major (all of task 0, then task 1, …).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskDataset {
    inputs: Vec<DMatrix<f64>>,
    targets: Vec<DVector<f64>>,
}

impl MultiTaskDataset {
    pub fn new(inputs: Vec<DMatrix<f64>>, targets: Vec<DVector<f64>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidDataset("dataset needs at least one task".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::InvalidDataset(format!(
                "{} input blocks but {} target blocks",
                inputs.len(),
                targets.len()
            )));
        }
        let p = inputs[0].ncols();
        if p == 0 {
            return Err(Error::InvalidDataset("inputs need at least one column".into()));
        }
        for (d, (x, y)) in inputs.iter().zip(&targets).enumerate() {
            if x.ncols() != p {
                return Err(Error::InvalidDataset(format!(
                    "task {d} has input dimension {}, expected {p}",
                    x.ncols()
                )));
            }
            if x.nrows() != y.len() {
                return Err(Error::InvalidDataset(format!(
                    "task {d} has {} inputs but {} targets",
                    x.nrows(),
                    y.len()
                )));
            }
            if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("task {d} contains non-finite values")));
            }
        }
        if targets.iter().all(|y| y.is_empty()) {
            return Err(Error::InvalidDataset("every task is empty".into()));
        }
        Ok(MultiTaskDataset { inputs, targets })
    }

    pub fn single_task(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        Self::new(vec![x], vec![y])
    }

    pub fn num_tasks(&self) -> usize {
        self.inputs.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].ncols()
    }

    pub fn inputs(&self, task: usize) -> &DMatrix<f64> {
        &self.inputs[task]
    }

    pub fn targets(&self, task: usize) -> &DVector<f64> {
        &self.targets[task]
    }

    pub fn task_len(&self, task: usize) -> usize {
        self.targets[task].len()
    }

    pub fn total_len(&self) -> usize {
        self.targets.iter().map(|y| y.len()).sum()
    }

    /// Row offset of each task block in the vectorized layout.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.targets
            .iter()
            .map(|y| {
                let o = acc;
                acc += y.len();
                o
            })
            .collect()
    }

    /// Task index of every vectorized observation.
    pub fn task_of_rows(&self) -> Vec<usize> {
        self.targets
            .iter()
            .enumerate()
            .flat_map(|(d, y)| std::iter::repeat_n(d, y.len()))
            .collect()
    }

    pub fn stacked_inputs(&self) -> DMatrix<f64> {
        let n = self.total_len();
        let p = self.input_dim();
        let mut out = DMatrix::zeros(n, p);
        let mut r = 0;
        for x in &self.inputs {
            for i in 0..x.nrows() {
                out.row_mut(r).copy_from(&x.row(i));
                r += 1;
            }
        }
        out
    }

    pub fn stacked_targets(&self) -> DVector<f64> {
        DVector::from_iterator(self.total_len(), self.targets.iter().flat_map(|y| y.iter().copied()))
    }

    pub(crate) fn map_targets(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let targets = self
            .targets
            .iter()
            .enumerate()
            .map(|(d, y)| y.map(|v| f(d, v)))
            .collect();
        MultiTaskDataset {
            inputs: self.inputs.clone(),
            targets,
        }
    }
}

/// Affine output transform `y_std = (y − offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub offset: f64,
    pub scale: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization {
        offset: 0.0,
        scale: 1.0,
    };

    /// Sample mean and standard deviation; degenerate samples (fewer than
    /// two points, or zero spread) keep unit scale.
    pub fn fit(y: &[f64]) -> Self {
        if y.is_empty() {
            return Self::IDENTITY;
        }
        let n = y.len() as f64;
        let offset = y.iter().sum::<f64>() / n;
        if y.len() < 2 {
            return Standardization { offset, scale: 1.0 };
        }
        let var = y.iter().map(|v| (v - offset).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        let scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        Standardization { offset, scale }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    pub fn inverse_mean(&self, m: f64) -> f64 {
        m * self.scale + self.offset
    }

    pub fn inverse_variance(&self, v: f64) -> f64 {
        v * self.scale * self.scale
    }
}
