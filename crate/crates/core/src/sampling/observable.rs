use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use super::{PacketEnsemble, SamplingError};
use crate::dynamics::Wavepacket;
use crate::parallel::with_workers;
use crate::stats;

pub const DEFAULT_QUADRATURE_NODES: usize = 20;

/// Phase-space function `a(z)`, `z = (x, ξ)`.
#[derive(Clone)]
pub struct PhaseFn(pub Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl fmt::Debug for PhaseFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PhaseFn(..)")
    }
}

#[derive(Debug, Clone)]
pub enum Observable {
    /// `b·z + c`
    Linear { b: DVector<f64>, c: f64 },
    /// `zᵀQz + b·z + c`
    Quadratic {
        q: DMatrix<f64>,
        b: DVector<f64>,
        c: f64,
    },
    /// Arbitrary function, integrated by Gauss–Hermite quadrature.
    GridFunction { f: PhaseFn, nodes: usize },
}

impl Observable {
    /// `x_k` in an n-dimensional system.
    pub fn position(n: usize, k: usize) -> Self {
        Self::unit(2 * n, k)
    }

    /// `ξ_k` in an n-dimensional system.
    pub fn momentum(n: usize, k: usize) -> Self {
        Self::unit(2 * n, n + k)
    }

    /// `x_k²`.
    pub fn position_squared(n: usize, k: usize) -> Self {
        Self::square(2 * n, k)
    }

    /// `ξ_k²`.
    pub fn momentum_squared(n: usize, k: usize) -> Self {
        Self::square(2 * n, n + k)
    }

    pub fn function<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Observable::GridFunction {
            f: PhaseFn(Arc::new(f)),
            nodes: DEFAULT_QUADRATURE_NODES,
        }
    }

    fn unit(d: usize, i: usize) -> Self {
        let mut b = DVector::zeros(d);
        b[i] = 1.0;
        Observable::Linear { b, c: 0.0 }
    }

    fn square(d: usize, i: usize) -> Self {
        let mut q = DMatrix::zeros(d, d);
        q[(i, i)] = 1.0;
        Observable::Quadratic {
            q,
            b: DVector::zeros(d),
            c: 0.0,
        }
    }

    /// Exact expectation under a Gaussian with `mean` and covariance `cov`
    /// (for GridFunction, by quadrature).
    pub fn gaussian_expectation(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<f64, SamplingError> {
        let d = mean.len();
        match self {
            Observable::Linear { b, c } => {
                check_len(b.len(), d)?;
                Ok(b.dot(mean) + c)
            }
            Observable::Quadratic { q, b, c } => {
                check_len(b.len(), d)?;
                check_len(q.nrows(), d)?;
                Ok(mean.dot(&(q * mean)) + b.dot(mean) + c + (q * cov).trace())
            }
            Observable::GridFunction { f, nodes } => quadrature(&f.0, *nodes, mean, cov),
        }
    }

    /// Pointwise value `a(z)`.
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Observable::Linear { b, c } => b.iter().zip(z).map(|(b, z)| b * z).sum::<f64>() + c,
            Observable::Quadratic { q, b, c } => {
                let d = z.len();
                let mut total = *c;
                for i in 0..d {
                    total += b[i] * z[i];
                    for j in 0..d {
                        total += z[i] * q[(i, j)] * z[j];
                    }
                }
                total
            }
            Observable::GridFunction { f, .. } => (f.0)(z),
        }
    }
}

fn check_len(got: usize, d: usize) -> Result<(), SamplingError> {
    if got != d {
        return Err(SamplingError::DimensionMismatch(format!(
            "observable has dimension {got}, phase space {d}"
        )));
    }
    Ok(())
}

/// Gauss–Hermite nodes and weights for `∫ f(u) e^{−u²} du` (Golub–Welsch).
pub fn gauss_hermite(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(k, k);
    for i in 1..k {
        let off = (i as f64 / 2.0).sqrt();
        jacobi[(i, i - 1)] = off;
        jacobi[(i - 1, i)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn cached_rule(k: usize) -> (Vec<f64>, Vec<f64>) {
    static DEFAULT: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    if k == DEFAULT_QUADRATURE_NODES {
        DEFAULT.get_or_init(|| gauss_hermite(k)).clone()
    } else {
        gauss_hermite(k)
    }
}

/// `E[f(Z)]` for `Z ~ N(mean, cov)` in the principal frame of `cov`.
fn quadrature(
    f: &Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    k: usize,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<f64, SamplingError> {
    let d = mean.len();
    if d != 2 {
        return Err(SamplingError::QuadratureDimension(d));
    }
    let (nodes, weights) = cached_rule(k);
    let eig = SymmetricEigen::new(cov.clone());
    let scale: Vec<f64> = eig.eigenvalues.iter().map(|&l| (2.0 * l.max(0.0)).sqrt()).collect();
    let v = &eig.eigenvectors;
    let mut total = 0.0;
    let mut z = [0.0; 2];
    for (u0, w0) in nodes.iter().zip(&weights) {
        for (u1, w1) in nodes.iter().zip(&weights) {
            let (s0, s1) = (scale[0] * u0, scale[1] * u1);
            z[0] = mean[0] + v[(0, 0)] * s0 + v[(0, 1)] * s1;
            z[1] = mean[1] + v[(1, 0)] * s0 + v[(1, 1)] * s1;
            total += w0 * w1 * f(&z);
        }
    }
    Ok(total / std::f64::consts::PI)
}

/// Integral of `obs` against one packet: mass times the Gaussian moment with
/// covariance `εΣ`.
pub fn packet_observable(wp: &Wavepacket, obs: &Observable, epsilon: f64) -> Result<f64, SamplingError> {
    let mass = wp.mass(epsilon);
    let center = wp.center();
    let moment = match obs {
        Observable::Linear { b, c } => {
            check_len(b.len(), center.len())?;
            b.dot(&center) + c
        }
        _ => {
            let sigma = wp.sigma().ok_or_else(|| {
                SamplingError::InvalidConfig("packet G is not positive definite".into())
            })?;
            obs.gaussian_expectation(&center, &(sigma * epsilon))?
        }
    };
    Ok(mass * moment)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleEstimate {
    pub estimate: f64,
    /// Monte Carlo standard error, sample std / √M.
    pub sample_std: f64,
    /// False when M = 1 and the standard error is undefined (reported as 0).
    pub std_defined: bool,
}

/// Sample mean over packets with its standard error.
pub fn ensemble_observable(ens: &PacketEnsemble, obs: &Observable) -> Result<EnsembleEstimate, SamplingError> {
    let eps = ens.epsilon();
    let values: Vec<f64> = with_workers(ens.provenance.sampling.workers, || {
        ens.packets
            .par_iter()
            .map(|wp| packet_observable(wp, obs, eps))
            .collect::<Result<_, _>>()
    })?;
    let estimate = stats::mean(&values);
    Ok(match stats::sample_variance(&values) {
        Some(var) => EnsembleEstimate {
            estimate,
            sample_std: (var / values.len() as f64).sqrt(),
            std_defined: true,
        },
        None => EnsembleEstimate {
            estimate,
            sample_std: 0.0,
            std_defined: false,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::super::{make_ensemble, SamplingConfig};
    use super::*;
    use crate::gaussian::GaussianState;
    use crate::params::DissipationParams;
    use approx::assert_relative_eq;

    fn unit_packet(q: f64, p: f64, sigma: [f64; 4], eps: f64) -> Wavepacket {
        let s = DMatrix::from_row_slice(2, 2, &sigma);
        let g = s.clone().try_inverse().unwrap();
        let a = 1.0 / (2.0 * std::f64::consts::PI * eps * s.determinant().sqrt());
        Wavepacket::new(DVector::from_element(1, q), DVector::from_element(1, p), g, a, 0.0)
    }

    #[test]
    fn first_moment() {
        let wp = unit_packet(0.7, -0.3, [5.0, 0.0, 0.0, 5.0], 1.0 / 16.0);
        assert_relative_eq!(
            packet_observable(&wp, &Observable::position(1, 0), 1.0 / 16.0).unwrap(),
            0.7,
            max_relative = 1e-14
        );
    }

    #[test]
    fn second_moment() {
        let eps = 1.0 / 16.0;
        let wp = unit_packet(0.7, -0.3, [5.0, 0.0, 0.0, 5.0], eps);
        let v = packet_observable(&wp, &Observable::position_squared(1, 0), eps).unwrap();
        assert_relative_eq!(v, 0.49 + 5.0 / 16.0, max_relative = 1e-14);
    }

    #[test]
    fn quadrature_matches_analytic() {
        let eps = 1.0 / 16.0;
        let wp = unit_packet(0.7, -0.3, [5.0, 1.0, 1.0, 2.0], eps);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let b = DVector::from_vec(vec![0.2, -1.0]);
        let quad = Observable::Quadratic {
            q: q.clone(),
            b: b.clone(),
            c: 0.4,
        };
        let func = Observable::function(move |z| {
            let v = DVector::from_column_slice(z);
            v.dot(&(&q * &v)) + b.dot(&v) + 0.4
        });
        let exact = packet_observable(&wp, &quad, eps).unwrap();
        let numeric = packet_observable(&wp, &func, eps).unwrap();
        assert_relative_eq!(numeric, exact, max_relative = 1e-10);
        let x2 = packet_observable(&wp, &Observable::function(|z| z[0] * z[0]), eps).unwrap();
        assert_relative_eq!(
            x2,
            packet_observable(&wp, &Observable::position_squared(1, 0), eps).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn hermite_rule_integrates_polynomials() {
        let (x, w) = gauss_hermite(DEFAULT_QUADRATURE_NODES);
        let pi = std::f64::consts::PI;
        assert_relative_eq!(w.iter().sum::<f64>(), pi.sqrt(), max_relative = 1e-13);
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert_relative_eq!(m2, pi.sqrt() / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn quadrature_rejected_above_two_dimensions() {
        let wp = Wavepacket::new(
            DVector::zeros(2),
            DVector::zeros(2),
            DMatrix::identity(4, 4),
            1.0,
            0.0,
        );
        assert!(matches!(
            packet_observable(&wp, &Observable::function(|z| z[0]), 0.1),
            Err(SamplingError::QuadratureDimension(4))
        ));
    }

    #[test]
    fn single_packet_estimate_has_undefined_std() {
        let init = GaussianState::new_1d(-0.1, 0.2, [[5.0, 0.0], [0.0, 5.0]]).unwrap();
        let params = DissipationParams::closed(1, 1.0 / 16.0).unwrap();
        let ens = make_ensemble(&init, &params, &SamplingConfig::new(1, 8)).unwrap();
        let est = ensemble_observable(&ens, &Observable::position(1, 0)).unwrap();
        assert_relative_eq!(est.estimate, ens.packets[0].q[0], max_relative = 1e-14);
        assert_eq!(est.sample_std, 0.0);
        assert!(!est.std_defined);
    }

    #[test]
    fn initial_mean_estimate() {
        let m = 10_000;
        let eps = 1.0 / 16.0;
        let init = GaussianState::new_1d(-0.1, 0.2, [[5.0, 0.0], [0.0, 5.0]]).unwrap();
        let params = DissipationParams::closed(1, eps).unwrap();
        let ens = make_ensemble(&init, &params, &SamplingConfig::new(m, 10)).unwrap();
        let est = ensemble_observable(&ens, &Observable::position(1, 0)).unwrap();
        assert!((est.estimate + 0.1).abs() < 4.0 * ((1.0 - eps) * 5.0 / m as f64).sqrt());
    }
}
