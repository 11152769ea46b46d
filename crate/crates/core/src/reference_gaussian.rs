//! Exact first and second moments of the Wigner–Fokker–Planck solution for
//! quadratic potentials.
//!
//! With `V = ½xᵀA₂x + a₁·x + a₀` the Gaussian stays Gaussian:
//!
//! ```text
//! dm = F m + f,               f = (0, −a₁)
//! dS = F S + S Fᵀ + ε(B − Γ₁), F = C − Γ₂ − M̃
//! ```

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::aux_matrices::build_aux_matrices;
use crate::gaussian::GaussianState;
use crate::params::DissipationParams;
use crate::potential::Potential;
use crate::sampling::{Observable, SamplingError};

pub const DEFAULT_REFERENCE_DT: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("the moment reference needs a quadratic potential, got {0}")]
    NotQuadratic(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid time stepping: {0}")]
    InvalidStep(String),
    #[error("moment covariance lost positive definiteness at t = {0}")]
    NotPositiveDefinite(f64),
    #[error(transparent)]
    Observable(#[from] SamplingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub mean: DVector<f64>,
    /// Full (un-rescaled) covariance of the Wigner distribution.
    pub cov: DMatrix<f64>,
    pub time: f64,
}

impl MomentState {
    pub fn from_initial(init: &GaussianState) -> Self {
        Self {
            mean: init.mean().clone(),
            cov: init.cov().clone(),
            time: 0.0,
        }
    }
}

/// Drift matrix F, forcing f and diffusion `ε(B − Γ₁)` of the moment flow.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    pub drift: DMatrix<f64>,
    pub forcing: DVector<f64>,
    pub diffusion: DMatrix<f64>,
}

impl MomentSystem {
    pub fn new(pot: &Potential, params: &DissipationParams) -> Result<Self, ReferenceError> {
        let Potential::Harmonic { a2, a1, .. } = pot else {
            return Err(ReferenceError::NotQuadratic(pot.label()));
        };
        let n = params.dim();
        if a1.len() != n {
            return Err(ReferenceError::DimensionMismatch(format!(
                "potential n = {}, parameters n = {n}",
                a1.len()
            )));
        }
        let aux = build_aux_matrices(params, a2)
            .map_err(|e| ReferenceError::DimensionMismatch(e.to_string()))?;
        let mut forcing = DVector::zeros(2 * n);
        for k in 0..n {
            forcing[n + k] = -a1[k];
        }
        Ok(Self {
            drift: aux.covariance_drift(),
            forcing,
            diffusion: aux.diffusion() * params.epsilon(),
        })
    }

    pub fn rhs(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let dm = &self.drift * mean + &self.forcing;
        let ds = &self.drift * cov + cov * self.drift.transpose() + &self.diffusion;
        let ds = 0.5 * (&ds + ds.transpose());
        (dm, ds)
    }
}

/// `(dmean, dcov)` at the given state.
pub fn moment_rhs(
    ms: &MomentState,
    pot: &Potential,
    params: &DissipationParams,
) -> Result<(DVector<f64>, DMatrix<f64>), ReferenceError> {
    let sys = MomentSystem::new(pot, params)?;
    if ms.mean.len() != sys.forcing.len() || ms.cov.nrows() != sys.forcing.len() {
        return Err(ReferenceError::DimensionMismatch(format!(
            "moment state has dimension {}, system {}",
            ms.mean.len(),
            sys.forcing.len()
        )));
    }
    Ok(sys.rhs(&ms.mean, &ms.cov))
}

/// RK4 integration of the moment flow from `init` at t = 0 to `t`.
pub fn evolve_moments(
    init: &GaussianState,
    pot: &Potential,
    params: &DissipationParams,
    t: f64,
    dt: f64,
) -> Result<MomentState, ReferenceError> {
    Ok(evolve_moments_with_checkpoints(init, pot, params, &[t], dt)?
        .pop()
        .expect("one target"))
}

/// Moment states at each (sorted, non-negative) time in `times`.
pub fn evolve_moments_with_checkpoints(
    init: &GaussianState,
    pot: &Potential,
    params: &DissipationParams,
    times: &[f64],
    dt: f64,
) -> Result<Vec<MomentState>, ReferenceError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ReferenceError::InvalidStep(format!("dt = {dt}")));
    }
    if times.iter().any(|&t| !(t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(ReferenceError::InvalidStep("times must be sorted and non-negative".into()));
    }
    if init.dim() != params.dim() {
        return Err(ReferenceError::DimensionMismatch(format!(
            "initial state n = {}, parameters n = {}",
            init.dim(),
            params.dim()
        )));
    }
    let sys = MomentSystem::new(pot, params)?;
    let mut m = init.mean().clone();
    let mut s = init.cov().clone();
    let mut t_seg = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        let tol = 1e-12 * target.abs().max(1.0);
        let mut k = 0u64;
        loop {
            let t = t_seg + k as f64 * dt;
            let rem = target - t;
            if rem <= tol {
                break;
            }
            let h = if rem <= dt * (1.0 + 1e-9) { rem } else { dt };
            let (k1m, k1s) = sys.rhs(&m, &s);
            let (k2m, k2s) = sys.rhs(&(&m + &k1m * (0.5 * h)), &(&s + &k1s * (0.5 * h)));
            let (k3m, k3s) = sys.rhs(&(&m + &k2m * (0.5 * h)), &(&s + &k2s * (0.5 * h)));
            let (k4m, k4s) = sys.rhs(&(&m + &k3m * h), &(&s + &k3s * h));
            m += (k1m + k2m * 2.0 + k3m * 2.0 + k4m) * (h / 6.0);
            s += (k1s + k2s * 2.0 + k3s * 2.0 + k4s) * (h / 6.0);
            s = 0.5 * (&s + s.transpose());
            k += 1;
        }
        if s.clone().cholesky().is_none() {
            return Err(ReferenceError::NotPositiveDefinite(target));
        }
        out.push(MomentState {
            mean: m.clone(),
            cov: s.clone(),
            time: target,
        });
        t_seg = target;
    }
    Ok(out)
}

/// Exact expectation of `obs` at time `t`.
pub fn reference_observable(
    init: &GaussianState,
    pot: &Potential,
    params: &DissipationParams,
    t: f64,
    obs: &Observable,
    dt: f64,
) -> Result<f64, ReferenceError> {
    let ms = evolve_moments(init, pot, params, t, dt)?;
    Ok(obs.gaussian_expectation(&ms.mean, &ms.cov)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rhs_open, rhs_sigma, Wavepacket};
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn reference_params() -> DissipationParams {
        DissipationParams::scalar(1.0 / 16.0, 0.4, 0.1, Complex64::i(), -1.0).unwrap()
    }

    #[test]
    fn closed_rotation_rates() {
        let pot = Potential::harmonic_1d(1.0, 0.0, 0.0);
        let params = DissipationParams::closed(1, 0.1).unwrap();
        let ms = MomentState {
            mean: DVector::from_vec(vec![1.0, 0.0]),
            cov: DMatrix::identity(2, 2),
            time: 0.0,
        };
        let (dm, ds) = moment_rhs(&ms, &pot, &params).unwrap();
        assert_eq!(dm, DVector::from_vec(vec![0.0, -1.0]));
        assert!(ds.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reference_drift_and_forcing() {
        let sys = MomentSystem::new(&Potential::harmonic_1d(1.0, 1.0, 0.0), &reference_params()).unwrap();
        assert_eq!(sys.drift, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 2.0]));
        assert_eq!(sys.forcing, DVector::from_vec(vec![0.0, -1.0]));
    }

    #[test]
    fn mean_rate_matches_center_equations() {
        let pot = Potential::harmonic_1d(1.0, 1.0, 0.0);
        let params = reference_params();
        let ms = MomentState {
            mean: DVector::from_vec(vec![-0.1, 0.2]),
            cov: DMatrix::identity(2, 2),
            time: 0.0,
        };
        let (dm, _) = moment_rhs(&ms, &pot, &params).unwrap();
        let wp = Wavepacket::new(
            DVector::from_element(1, -0.1),
            DVector::from_element(1, 0.2),
            DMatrix::identity(2, 2),
            1.0,
            0.0,
        );
        let d = rhs_open(&wp, &pot, &params).unwrap();
        assert_relative_eq!(dm[0], d.dq[0], epsilon = 1e-15);
        assert_relative_eq!(dm[1], d.dp[0], epsilon = 1e-15);
    }

    #[test]
    fn covariance_rate_is_scaled_sigma_rate() {
        let pot = Potential::harmonic_1d(1.0, 1.0, 0.0);
        let params = reference_params();
        let eps = params.epsilon();
        let sigma = DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 5.0]);
        let ms = MomentState {
            mean: DVector::from_vec(vec![-0.1, 0.2]),
            cov: &sigma * eps,
            time: 0.0,
        };
        let (_, ds) = moment_rhs(&ms, &pot, &params).unwrap();
        let dsig = rhs_sigma(&sigma, &pot, &params, &DVector::from_element(1, -0.1)).unwrap();
        assert_relative_eq!(ds, dsig * eps, epsilon = 1e-12);
    }

    #[test]
    fn initial_moment() {
        let init = GaussianState::new_1d(-0.1, 0.2, [[5.0, 0.0], [0.0, 5.0]]).unwrap();
        let pot = Potential::harmonic_1d(1.0, 1.0, 0.0);
        let v = reference_observable(&init, &pot, &reference_params(), 0.0, &Observable::position(1, 0), 1e-4)
            .unwrap();
        assert_eq!(v, -0.1);
    }

    #[test]
    fn closed_half_period() {
        let init = GaussianState::new_1d(1.0, 0.0, [[0.2, 0.0], [0.0, 0.2]]).unwrap();
        let pot = Potential::harmonic_1d(1.0, 0.0, 0.0);
        let params = DissipationParams::closed(1, 0.1).unwrap();
        let v = reference_observable(&init, &pot, &params, PI, &Observable::position(1, 0), 1e-4).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_converged() {
        let init = GaussianState::new_1d(-0.1, 0.2, [[0.2, 0.0], [0.0, 0.2]]).unwrap();
        let pot = Potential::harmonic_1d(1.0, 1.0, 0.0);
        let params = reference_params();
        for obs in [Observable::position(1, 0), Observable::momentum_squared(1, 0)] {
            let a = reference_observable(&init, &pot, &params, 1.0, &obs, 1e-4).unwrap();
            let b = reference_observable(&init, &pot, &params, 1.0, &obs, 5e-5).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn closed_flow_preserves_volume() {
        let init = GaussianState::new_1d(0.3, -0.4, [[0.5, 0.1], [0.1, 0.3]]).unwrap();
        let pot = Potential::harmonic_1d(2.5, 0.3, 0.0);
        let params = DissipationParams::closed(1, 0.1).unwrap();
        let ms = evolve_moments(&init, &pot, &params, 7.0, 1e-3).unwrap();
        assert_relative_eq!(ms.cov.determinant(), init.cov().determinant(), max_relative = 1e-8);
    }

    #[test]
    fn non_quadratic_rejected() {
        let init = GaussianState::new_1d(0.0, 0.0, [[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let err = evolve_moments(&init, &Potential::DoubleWell, &reference_params(), 1.0, 1e-3);
        assert!(matches!(err, Err(ReferenceError::NotQuadratic(_))));
    }
}
