//! Gaussian phase-space states.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("mean has length {mean}, covariance is {rows}x{cols}; expected 2n and 2n x 2n")]
    Shape { mean: usize, rows: usize, cols: usize },
    #[error("covariance is not symmetric")]
    NotSymmetric,
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("non-finite entry in Gaussian state")]
    NonFinite,
}

/// Wigner Gaussian with mean `(x₀, ξ₀)` and covariance `Σ₀` (2n×2n).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, GaussianError> {
        let d = mean.len();
        if d == 0 || d % 2 != 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(GaussianError::Shape {
                mean: d,
                rows: cov.nrows(),
                cols: cov.ncols(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(GaussianError::NonFinite);
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(GaussianError::NotSymmetric);
        }
        if cov.clone().cholesky().is_none() {
            return Err(GaussianError::NotPositiveDefinite);
        }
        Ok(Self { mean, cov })
    }

    /// One-dimensional state centred at `(x0, xi0)`.
    pub fn new_1d(x0: f64, xi0: f64, cov: [[f64; 2]; 2]) -> Result<Self, GaussianError> {
        Self::new(
            DVector::from_vec(vec![x0, xi0]),
            DMatrix::from_row_slice(2, 2, &[cov[0][0], cov[0][1], cov[1][0], cov[1][1]]),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Density at phase-space point `z`.
    pub fn density(&self, z: &[f64]) -> f64 {
        let d = self.mean.len();
        let chol = self.cov.clone().cholesky().expect("validated SPD");
        let diff = DVector::from_iterator(d, z.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let y = chol.solve(&diff);
        let det = chol.determinant();
        (-0.5 * diff.dot(&y)).exp() / ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt()
    }
}
