//! Block matrices shared by the wavepacket, moment and covariance flows.
//!
//! Phase-space vectors are ordered `(x₁..xₙ, ξ₁..ξₙ)`, so every matrix here is
//! 2n×2n with n×n blocks.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::params::DissipationParams;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("Hessian is {rows}x{cols}, expected {n}x{n}")]
pub struct AuxDimensionError {
    pub rows: usize,
    pub cols: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxMatrices {
    /// `[[0, Re Γ], [Re Γ, 0]]`
    pub gamma1: DMatrix<f64>,
    /// `diag(−Im γ, −Im γ)`
    pub gamma2: DMatrix<f64>,
    /// `diag(β, α)`
    pub bmat: DMatrix<f64>,
    /// `diag(−μ, μ)`
    pub mtilde: DMatrix<f64>,
    /// `[[0, I], [−∇²V, 0]]`
    pub cmat: DMatrix<f64>,
}

impl AuxMatrices {
    /// `B − Γ₁`, the diffusion matrix.
    pub fn diffusion(&self) -> DMatrix<f64> {
        &self.bmat - &self.gamma1
    }

    /// `Γ₂ + M̃ − C`, the matrix K with `dG = KᵀG + GK − G(B−Γ₁)G`.
    pub fn riccati_drift(&self) -> DMatrix<f64> {
        &self.gamma2 + &self.mtilde - &self.cmat
    }

    /// `C − Γ₂ − M̃`, the drift of the covariance and the moment flow.
    pub fn covariance_drift(&self) -> DMatrix<f64> {
        -self.riccati_drift()
    }
}

pub fn build_aux_matrices(
    params: &DissipationParams,
    hess_at_q: &DMatrix<f64>,
) -> Result<AuxMatrices, AuxDimensionError> {
    let n = params.dim();
    if hess_at_q.nrows() != n || hess_at_q.ncols() != n {
        return Err(AuxDimensionError {
            rows: hess_at_q.nrows(),
            cols: hess_at_q.ncols(),
            n,
        });
    }
    let d = 2 * n;
    let mut gamma1 = DMatrix::zeros(d, d);
    let mut gamma2 = DMatrix::zeros(d, d);
    let mut bmat = DMatrix::zeros(d, d);
    let mut mtilde = DMatrix::zeros(d, d);
    let mut cmat = DMatrix::zeros(d, d);
    for k in 0..n {
        let g = params.gamma()[k];
        gamma1[(k, n + k)] = g.re;
        gamma1[(n + k, k)] = g.re;
        gamma2[(k, k)] = -g.im;
        gamma2[(n + k, n + k)] = -g.im;
        bmat[(k, k)] = params.beta()[k];
        bmat[(n + k, n + k)] = params.alpha()[k];
        mtilde[(k, k)] = -params.mu()[k];
        mtilde[(n + k, n + k)] = params.mu()[k];
        cmat[(k, n + k)] = 1.0;
        for j in 0..n {
            cmat[(n + k, j)] = -hess_at_q[(k, j)];
        }
    }
    Ok(AuxMatrices {
        gamma1,
        gamma2,
        bmat,
        mtilde,
        cmat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn m2(v: [f64; 4]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &v)
    }

    #[test]
    fn reference_parameter_layout() {
        let p = DissipationParams::scalar(1.0 / 16.0, 0.4, 0.1, Complex64::i(), -1.0).unwrap();
        let aux = build_aux_matrices(&p, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(aux.gamma1, DMatrix::zeros(2, 2));
        assert_eq!(aux.gamma2, m2([-1.0, 0.0, 0.0, -1.0]));
        assert_eq!(aux.bmat, m2([0.1, 0.0, 0.0, 0.4]));
        assert_eq!(aux.mtilde, m2([1.0, 0.0, 0.0, -1.0]));
        assert_eq!(aux.cmat, m2([0.0, 1.0, -1.0, 0.0]));
        assert_eq!(aux.covariance_drift(), m2([0.0, 1.0, -1.0, 2.0]));
    }

    #[test]
    fn free_closed_particle() {
        let p = DissipationParams::closed(1, 0.5).unwrap();
        let aux = build_aux_matrices(&p, &DMatrix::zeros(1, 1)).unwrap();
        for m in [&aux.gamma1, &aux.gamma2, &aux.bmat, &aux.mtilde] {
            assert!(m.iter().all(|&v| v == 0.0));
        }
        assert_eq!(aux.cmat, m2([0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn real_gamma_has_no_gamma2() {
        let p = DissipationParams::scalar(0.1, 1.0, 1.0, Complex64::new(0.7, 0.0), 0.3).unwrap();
        let aux = build_aux_matrices(&p, &DMatrix::zeros(1, 1)).unwrap();
        assert!(aux.gamma2.iter().all(|&v| v == 0.0));
        assert_eq!(aux.gamma1[(0, 1)], 0.7);
    }

    #[test]
    fn wrong_hessian_shape() {
        let p = DissipationParams::closed(2, 0.5).unwrap();
        assert!(build_aux_matrices(&p, &DMatrix::zeros(1, 1)).is_err());
    }
}
