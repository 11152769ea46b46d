//! External potentials with analytic first and second derivatives.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("potential is {expected}-dimensional, got a point of dimension {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("potential evaluation produced a non-finite {what} at x = {x:?}")]
    NonFinite { what: &'static str, x: Vec<f64> },
    #[error("harmonic coefficients are inconsistent: {0}")]
    BadHarmonic(String),
}

pub type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
/// Writes ∇V into the output slice.
pub type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
/// Writes ∇²V (row-major n×n) into the output slice.
pub type HessFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// User-supplied potential. All three callbacks are required.
#[derive(Clone)]
pub struct CustomPotential {
    pub dim: usize,
    pub label: String,
    pub value: Arc<ValueFn>,
    pub grad: Arc<GradFn>,
    pub hess: Arc<HessFn>,
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPotential")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum Potential {
    /// `V(x) = ½ xᵀ A₂ x + a₁·x + a₀` with `A₂` symmetric.
    Harmonic {
        a2: DMatrix<f64>,
        a1: DVector<f64>,
        a0: f64,
    },
    /// `V(x) = (x² − 1)²`
    DoubleWell,
    /// `V(x) = 0.08 x² (x² − 2)²`
    TripleWell,
    /// `V(x) = x² + x + sin x`
    NearHarmonic,
    Custom(CustomPotential),
}

/// Value, gradient and Hessian at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSample {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Potential {
    pub fn harmonic(a2: DMatrix<f64>, a1: DVector<f64>, a0: f64) -> Result<Self, PotentialError> {
        let n = a1.len();
        if a2.nrows() != n || a2.ncols() != n {
            return Err(PotentialError::BadHarmonic(format!(
                "A2 is {}x{}, a1 has length {n}",
                a2.nrows(),
                a2.ncols()
            )));
        }
        if (&a2 - a2.transpose()).amax() > 1e-14 * a2.amax().max(1.0) {
            return Err(PotentialError::BadHarmonic("A2 is not symmetric".into()));
        }
        if a2.iter().chain(a1.iter()).any(|v| !v.is_finite()) || !a0.is_finite() {
            return Err(PotentialError::BadHarmonic("non-finite coefficient".into()));
        }
        Ok(Potential::Harmonic { a2, a1, a0 })
    }

    /// One-dimensional `V(x) = ½ k x² + f x + c`.
    pub fn harmonic_1d(k: f64, f: f64, c: f64) -> Self {
        Potential::Harmonic {
            a2: DMatrix::from_element(1, 1, k),
            a1: DVector::from_element(1, f),
            a0: c,
        }
    }

    /// Spatial dimension n.
    pub fn dim(&self) -> usize {
        match self {
            Potential::Harmonic { a1, .. } => a1.len(),
            Potential::DoubleWell | Potential::TripleWell | Potential::NearHarmonic => 1,
            Potential::Custom(c) => c.dim,
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, Potential::Harmonic { .. })
    }

    pub fn label(&self) -> String {
        match self {
            Potential::Harmonic { .. } => "harmonic".into(),
            Potential::DoubleWell => "double-well".into(),
            Potential::TripleWell => "triple-well".into(),
            Potential::NearHarmonic => "near-harmonic".into(),
            Potential::Custom(c) => format!("custom:{}", c.label),
        }
    }

    /// Value only.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Potential::Harmonic { a2, a1, a0 } => {
                let n = a1.len();
                let mut v = *a0;
                for i in 0..n {
                    let mut row = 0.0;
                    for j in 0..n {
                        row += a2[(i, j)] * x[j];
                    }
                    v += 0.5 * x[i] * row + a1[i] * x[i];
                }
                v
            }
            Potential::DoubleWell => {
                let s = x[0] * x[0] - 1.0;
                s * s
            }
            Potential::TripleWell => {
                let x2 = x[0] * x[0];
                let s = x2 - 2.0;
                0.08 * x2 * s * s
            }
            Potential::NearHarmonic => x[0] * x[0] + x[0] + x[0].sin(),
            Potential::Custom(c) => (c.value)(x),
        }
    }

    /// Allocation-free evaluation into caller buffers: `grad` has length n and
    /// `hess` length n² (row-major). Returns V(x).
    pub fn eval_into(
        &self,
        x: &[f64],
        grad: &mut [f64],
        hess: &mut [f64],
    ) -> Result<f64, PotentialError> {
        self.derivatives_into(x, grad, hess)?;
        let value = self.value(x);
        if !value.is_finite() {
            return Err(non_finite("value", x));
        }
        Ok(value)
    }

    /// ∇V and ∇²V only; the integrators never need V itself.
    pub fn derivatives_into(
        &self,
        x: &[f64],
        grad: &mut [f64],
        hess: &mut [f64],
    ) -> Result<(), PotentialError> {
        let n = self.dim();
        if x.len() != n {
            return Err(PotentialError::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        match self {
            Potential::Harmonic { a2, a1, .. } => {
                for i in 0..n {
                    let mut g = a1[i];
                    for j in 0..n {
                        g += a2[(i, j)] * x[j];
                        hess[i * n + j] = a2[(i, j)];
                    }
                    grad[i] = g;
                }
            }
            Potential::DoubleWell => {
                let y = x[0];
                grad[0] = 4.0 * y * (y * y - 1.0);
                hess[0] = 12.0 * y * y - 4.0;
            }
            Potential::TripleWell => {
                let y = x[0];
                let y2 = y * y;
                // V = 0.08 (y⁶ − 4y⁴ + 4y²)
                grad[0] = 0.08 * (6.0 * y2 * y2 * y - 16.0 * y2 * y + 8.0 * y);
                hess[0] = 0.08 * (30.0 * y2 * y2 - 48.0 * y2 + 8.0);
            }
            Potential::NearHarmonic => {
                let y = x[0];
                let (s, c) = y.sin_cos();
                grad[0] = 2.0 * y + 1.0 + c;
                hess[0] = 2.0 - s;
            }
            Potential::Custom(c) => {
                (c.grad)(x, grad);
                (c.hess)(x, hess);
            }
        }
        if grad[..n].iter().any(|g| !g.is_finite()) {
            return Err(non_finite("gradient", x));
        }
        if hess[..n * n].iter().any(|h| !h.is_finite()) {
            return Err(non_finite("hessian", x));
        }
        Ok(())
    }
}

fn non_finite(what: &'static str, x: &[f64]) -> PotentialError {
    PotentialError::NonFinite {
        what,
        x: x.to_vec(),
    }
}

/// `(V, ∇V, ∇²V)` at `x`.
pub fn potential_eval(pot: &Potential, x: &[f64]) -> Result<PotentialSample, PotentialError> {
    let n = pot.dim();
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    let value = pot.eval_into(x, &mut grad, &mut hess)?;
    Ok(PotentialSample {
        value,
        grad: DVector::from_vec(grad),
        hess: DMatrix::from_row_slice(n, n, &hess),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn double_well_at_origin() {
        let s = potential_eval(&Potential::DoubleWell, &[0.0]).unwrap();
        assert_eq!((s.value, s.grad[0], s.hess[(0, 0)]), (1.0, 0.0, -4.0));
    }

    #[test]
    fn shifted_harmonic() {
        let pot = Potential::harmonic_1d(1.0, 1.0, 0.0);
        let s = potential_eval(&pot, &[-0.1]).unwrap();
        assert_relative_eq!(s.value, -0.095, epsilon = 1e-15);
        assert_relative_eq!(s.grad[0], 0.9, epsilon = 1e-15);
        assert_eq!(s.hess[(0, 0)], 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            potential_eval(&Potential::DoubleWell, &[0.0, 1.0]),
            Err(PotentialError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn custom_non_finite_is_reported() {
        let pot = Potential::Custom(CustomPotential {
            dim: 1,
            label: "log".into(),
            value: Arc::new(|x| x[0].ln()),
            grad: Arc::new(|x, g| g[0] = 1.0 / x[0]),
            hess: Arc::new(|x, h| h[0] = -1.0 / (x[0] * x[0])),
        });
        assert!(potential_eval(&pot, &[2.0]).is_ok());
        assert!(matches!(
            potential_eval(&pot, &[-1.0]),
            Err(PotentialError::NonFinite { what: "value", .. })
        ));
    }

    #[test]
    fn asymmetric_harmonic_rejected() {
        let a2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(Potential::harmonic(a2, DVector::zeros(2), 0.0).is_err());
    }
}
