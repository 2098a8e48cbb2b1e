//! Small dense symmetric solves for the q × q normal equations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Systems whose estimated reciprocal condition falls below this are
/// treated as singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// Factorized symmetric positive definite matrix with its reciprocal
/// condition number (ratio of extreme eigenvalues).
#[derive(Debug, Clone)]
pub struct SymmetricSolver {
    factor: Cholesky<f64, Dyn>,
    rcond: f64,
}

impl SymmetricSolver {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let rcond = reciprocal_condition(&matrix);
        if !(rcond >= RCOND_THRESHOLD) {
            return Err(Error::SingularSystem { rcond });
        }
        let factor = Cholesky::new(matrix).ok_or(Error::SingularSystem { rcond })?;
        Ok(Self { factor, rcond })
    }

    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn dim(&self) -> usize {
        self.factor.l_dirty().nrows()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(rhs)
    }
}

/// λ_min / λ_max of a symmetric matrix; 0 for an empty or zero matrix.
pub fn reciprocal_condition(matrix: &DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 {
        return 0.0;
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return 0.0;
    }
    let eig = SymmetricEigen::new(matrix.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if max == 0.0 || min <= 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(matrix: &DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = SymmetricEigen::new(matrix.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    values.sort_by(|a, b| a.total_cmp(b));
    values
}
