//! Cholesky factorization with bounded jitter escalation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter added before factorization, expressed relative to the
/// mean diagonal of the matrix being factorized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub relative: f64,
    /// Escalation multiplies `relative` by 10 per attempt until this bound.
    pub max_relative: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            relative: 1e-8,
            max_relative: 1e-4,
        }
    }
}

impl Jitter {
    /// No jitter and no escalation: the matrix is factorized as given.
    pub fn none() -> Self {
        Jitter {
            relative: 0.0,
            max_relative: 0.0,
        }
    }

    fn schedule(&self) -> Vec<f64> {
        let mut out = vec![self.relative];
        if self.relative > 0.0 {
            let mut j = self.relative * 10.0;
            while j <= self.max_relative * (1.0 + 1e-12) {
                out.push(j);
                j *= 10.0;
            }
        }
        out
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix, together
/// with the absolute jitter that was added to its diagonal.
#[derive(Debug, Clone)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Solves `L x = b` (forward substitution only).
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `Σ log L_ii`, i.e. half the log-determinant.
    pub fn half_log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        (0..l.nrows()).map(|i| l[(i, i)].ln()).sum()
    }
}

/// Factorizes `matrix + jitter·I`, escalating the jitter on failure.
pub fn factorize(matrix: &DMatrix<f64>, jitter: &Jitter) -> Result<Factor> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::shape(format!(
            "cannot factorize a {}x{} matrix",
            n,
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned {
            max_jitter: jitter.max_relative,
        });
    }
    let mean_diag = if n == 0 {
        0.0
    } else {
        matrix.diagonal().sum() / n as f64
    };
    for rel in jitter.schedule() {
        let absolute = rel * mean_diag.abs();
        let mut m = matrix.clone();
        if absolute > 0.0 {
            for i in 0..n {
                m[(i, i)] += absolute;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            let l = chol.l_dirty();
            if (0..n).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0) {
                return Ok(Factor { chol, jitter: absolute });
            }
        }
    }
    Err(Error::IllConditioned {
        max_jitter: jitter.max_relative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_escalates_by_decades() {
        let s = Jitter::default().schedule();
        assert_eq!(s.len(), 5);
        assert!((s[4] - 1e-4).abs() < 1e-18);
        assert_eq!(Jitter::none().schedule(), vec![0.0]);
    }

    #[test]
    fn singular_without_jitter_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            factorize(&m, &Jitter::none()),
            Err(Error::IllConditioned { .. })
        ));
        let f = factorize(&m, &Jitter::default()).unwrap();
        assert!(f.jitter > 0.0);
    }

    #[test]
    fn indefinite_fails_after_escalation() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(factorize(&m, &Jitter::default()).is_err());
    }

    #[test]
    fn reconstructs_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.4, 2.0, 3.0, 0.5, 0.4, 0.5, 2.0]);
        let f = factorize(&m, &Jitter::none()).unwrap();
        let l = f.l();
        assert!((&l * l.transpose() - &m).amax() < 1e-14);
        let expected = m.determinant().ln() / 2.0;
        assert!((f.half_log_det() - expected).abs() < 1e-13);
    }
}
