//! Monte Carlo decomposition of a Gaussian initial state into ε-scaled
//! packets, ensemble evolution, reconstruction and observables.

mod field;
mod observable;
mod snapshot;

pub use field::{reconstruct, reconstruct_with, GridAxis, GridSpec, WignerField, DEFAULT_CUTOFF_EXPONENT};
pub use observable::{
    ensemble_observable, gauss_hermite, packet_observable, EnsembleEstimate, Observable, PhaseFn,
    DEFAULT_QUADRATURE_NODES,
};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{evolve_on, DynamicsError, IntegratorConfig, Stepper, Wavepacket};
use crate::gaussian::GaussianState;
use crate::parallel::with_workers;
use crate::params::DissipationParams;
use crate::potential::Potential;

/// How many failing packets are listed in an error message.
const REPORTED_FAILURES: usize = 5;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("sampling covariance (1 - eps) * Sigma0 is not positive definite")]
    Factorization,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid sampling configuration: {0}")]
    InvalidConfig(String),
    #[error("{} of {total} packets failed; first: {}", failures.len(), format_failures(failures))]
    PacketFailures {
        total: usize,
        failures: Vec<(usize, DynamicsError)>,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("degenerate grid: {0}")]
    Grid(String),
    #[error("quadrature observables need a 2-dimensional phase space, got {0}")]
    QuadratureDimension(usize),
    #[error("snapshot format error: {0}")]
    Snapshot(String),
    #[error("snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl SamplingError {
    /// First failing packet index and its error, if this is a packet failure.
    pub fn first_failure(&self) -> Option<&(usize, DynamicsError)> {
        match self {
            SamplingError::PacketFailures { failures, .. } => failures.first(),
            _ => None,
        }
    }
}

fn format_failures(failures: &[(usize, DynamicsError)]) -> String {
    failures
        .iter()
        .take(REPORTED_FAILURES)
        .map(|(j, e)| format!("packet {j}: {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingConfig {
    pub num_samples: usize,
    pub seed: u64,
    pub workers: usize,
}

impl SamplingConfig {
    pub fn new(num_samples: usize, seed: u64) -> Self {
        Self {
            num_samples,
            seed,
            workers: 1,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    fn validate(&self) -> Result<(), SamplingError> {
        if self.num_samples == 0 {
            return Err(SamplingError::InvalidConfig("num_samples must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(SamplingError::InvalidConfig("workers must be >= 1".into()));
        }
        Ok(())
    }
}

/// Standard normal draws for packet `j`: a dedicated ChaCha stream keyed by
/// `(seed, j)`, independent of scheduling.
pub fn packet_normals(seed: u64, j: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j);
    for v in out.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
}

/// `M` centers drawn from `N(mean, (1−ε)Σ₀)`.
pub fn sample_initial_centers(
    init: &GaussianState,
    params: &DissipationParams,
    cfg: &SamplingConfig,
) -> Result<Vec<DVector<f64>>, SamplingError> {
    cfg.validate()?;
    if init.dim() != params.dim() {
        return Err(SamplingError::DimensionMismatch(format!(
            "initial state has n = {}, parameters n = {}",
            init.dim(),
            params.dim()
        )));
    }
    let d = 2 * init.dim();
    let cov = init.cov() * (1.0 - params.epsilon());
    let l = cov.cholesky().ok_or(SamplingError::Factorization)?.l();
    let mean = init.mean().clone();
    let seed = cfg.seed;
    Ok(with_workers(cfg.workers, || {
        (0..cfg.num_samples)
            .into_par_iter()
            .map(|j| {
                let mut u = vec![0.0; d];
                packet_normals(seed, j as u64, &mut u);
                &mean + &l * DVector::from_vec(u)
            })
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleProvenance {
    pub initial: GaussianState,
    pub sampling: SamplingConfig,
    /// Label of the potential the packets were last evolved under.
    pub potential: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketEnsemble {
    pub packets: Vec<Wavepacket>,
    pub params: DissipationParams,
    pub provenance: EnsembleProvenance,
}

impl PacketEnsemble {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn epsilon(&self) -> f64 {
        self.params.epsilon()
    }

    /// Time of the first packet (all packets share it).
    pub fn time(&self) -> f64 {
        self.packets.first().map_or(0.0, |p| p.t)
    }

    /// Per-packet masses `A (2πε)ⁿ √det Σ`.
    pub fn masses(&self) -> Vec<f64> {
        let eps = self.epsilon();
        self.packets.iter().map(|p| p.mass(eps)).collect()
    }

    pub fn to_snapshot(&self) -> Snapshot {
        Snapshot {
            dim: self.dim(),
            epsilon: self.epsilon(),
            time: self.time(),
            packets: self.packets.clone(),
        }
    }

    /// Rebuilds an ensemble from a snapshot and the run's metadata.
    pub fn restore(
        snapshot: Snapshot,
        params: DissipationParams,
        provenance: EnsembleProvenance,
    ) -> Result<Self, SamplingError> {
        if snapshot.dim != params.dim() || snapshot.epsilon != params.epsilon() {
            return Err(SamplingError::Snapshot(format!(
                "snapshot has n = {}, eps = {}; parameters have n = {}, eps = {}",
                snapshot.dim,
                snapshot.epsilon,
                params.dim(),
                params.epsilon()
            )));
        }
        Ok(Self {
            packets: snapshot.packets,
            params,
            provenance,
        })
    }
}

/// Initial amplitude `1/((2πε)ⁿ √det Σ₀)`, giving every packet unit mass.
pub fn initial_amplitude(epsilon: f64, n: usize, cov: &DMatrix<f64>) -> f64 {
    1.0 / ((2.0 * std::f64::consts::PI * epsilon).powi(n as i32) * cov.determinant().sqrt())
}

pub fn make_ensemble(
    init: &GaussianState,
    params: &DissipationParams,
    cfg: &SamplingConfig,
) -> Result<PacketEnsemble, SamplingError> {
    let centers = sample_initial_centers(init, params, cfg)?;
    let n = init.dim();
    let g0 = init
        .cov()
        .clone()
        .cholesky()
        .ok_or(SamplingError::Factorization)?
        .inverse();
    let g0 = 0.5 * (&g0 + g0.transpose());
    let a0 = initial_amplitude(params.epsilon(), n, init.cov());
    let packets = centers
        .into_iter()
        .map(|z| {
            Wavepacket::new(
                z.rows(0, n).into_owned(),
                z.rows(n, n).into_owned(),
                g0.clone(),
                a0,
                0.0,
            )
        })
        .collect();
    Ok(PacketEnsemble {
        packets,
        params: params.clone(),
        provenance: EnsembleProvenance {
            initial: init.clone(),
            sampling: *cfg,
            potential: None,
        },
    })
}

/// Advances every packet to `t_final`.
pub fn evolve_ensemble(
    ens: &PacketEnsemble,
    pot: &Potential,
    cfg: &IntegratorConfig,
    t_final: f64,
) -> Result<PacketEnsemble, SamplingError> {
    let mut out = evolve_ensemble_with_checkpoints(ens, pot, cfg, t_final, &[])?;
    Ok(out.pop().expect("final ensemble"))
}

/// Advances every packet to `t_final`, returning one ensemble per checkpoint
/// time followed by the final ensemble.
pub fn evolve_ensemble_with_checkpoints(
    ens: &PacketEnsemble,
    pot: &Potential,
    cfg: &IntegratorConfig,
    t_final: f64,
    checkpoints: &[f64],
) -> Result<Vec<PacketEnsemble>, SamplingError> {
    if pot.dim() != ens.dim() {
        return Err(SamplingError::DimensionMismatch(format!(
            "potential has n = {}, ensemble n = {}",
            pot.dim(),
            ens.dim()
        )));
    }
    cfg.validate()?;
    // Surface configuration errors once, not per packet.
    Stepper::open(pot, &ens.params, cfg)?;

    let results: Vec<_> = with_workers(ens.provenance.sampling.workers, || {
        ens.packets
            .par_iter()
            .map_init(
                || Stepper::open(pot, &ens.params, cfg).expect("validated above"),
                |stepper, wp| evolve_on(stepper, wp, t_final, checkpoints),
            )
            .collect()
    });

    let mut failures = Vec::new();
    let mut trajectories = Vec::with_capacity(results.len());
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => trajectories.push(t),
            Err(e) => failures.push((j, e)),
        }
    }
    if !failures.is_empty() {
        return Err(SamplingError::PacketFailures {
            total: ens.len(),
            failures,
        });
    }

    let mut provenance = ens.provenance.clone();
    provenance.potential = Some(pot.label());
    let mut stages: Vec<Vec<Wavepacket>> = (0..=checkpoints.len())
        .map(|_| Vec::with_capacity(trajectories.len()))
        .collect();
    for traj in trajectories {
        for (k, wp) in traj.checkpoints.into_iter().enumerate() {
            stages[k].push(wp);
        }
        stages[checkpoints.len()].push(traj.final_state);
    }
    Ok(stages
        .into_iter()
        .map(|packets| PacketEnsemble {
            packets,
            params: ens.params.clone(),
            provenance: provenance.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::evolve;
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn wide_state() -> GaussianState {
        GaussianState::new_1d(-0.1, 0.2, [[5.0, 0.0], [0.0, 5.0]]).unwrap()
    }

    fn reference_params() -> DissipationParams {
        DissipationParams::scalar(1.0 / 16.0, 0.4, 0.1, Complex64::i(), -1.0).unwrap()
    }

    #[test]
    fn degenerate_limit_collapses_to_mean() {
        let params = DissipationParams::closed(1, 1.0 - 1e-12).unwrap();
        let centers = sample_initial_centers(&wide_state(), &params, &SamplingConfig::new(100, 7)).unwrap();
        for c in centers {
            assert!((c[0] + 0.1).abs() < 1e-4 && (c[1] - 0.2).abs() < 1e-4);
        }
    }

    #[test]
    fn sample_statistics() {
        let m = 100_000;
        let params = reference_params();
        let centers = sample_initial_centers(&wide_state(), &params, &SamplingConfig::new(m, 11)).unwrap();
        let mf = m as f64;
        let var = 15.0 / 16.0 * 5.0;
        let mean: Vec<f64> = (0..2).map(|k| centers.iter().map(|c| c[k]).sum::<f64>() / mf).collect();
        assert!((mean[0] + 0.1).abs() < 4.0 * (var / mf).sqrt());
        assert!((mean[1] - 0.2).abs() < 4.0 * (var / mf).sqrt());
        for (a, b) in [(0, 0), (1, 1), (0, 1)] {
            let cov = centers.iter().map(|c| (c[a] - mean[a]) * (c[b] - mean[b])).sum::<f64>() / (mf - 1.0);
            let expected = if a == b { var } else { 0.0 };
            assert!((cov - expected).abs() < 0.05 * var, "cov[{a},{b}] = {cov}");
        }
    }

    #[test]
    fn centers_independent_of_workers() {
        let params = reference_params();
        let one = sample_initial_centers(&wide_state(), &params, &SamplingConfig::new(500, 3)).unwrap();
        let eight =
            sample_initial_centers(&wide_state(), &params, &SamplingConfig::new(500, 3).with_workers(8)).unwrap();
        assert_eq!(one, eight);
    }

    #[test]
    fn initial_amplitude_and_unit_mass() {
        let ens = make_ensemble(&wide_state(), &reference_params(), &SamplingConfig::new(10, 1)).unwrap();
        assert_relative_eq!(ens.packets[0].a, 8.0 / (5.0 * PI), max_relative = 1e-14);
        for m in ens.masses() {
            assert_relative_eq!(m, 1.0, max_relative = 1e-14);
        }
        assert!(ens.packets.iter().all(|p| p.t == 0.0));
    }

    #[test]
    fn single_packet_ensemble_matches_direct_evolution() {
        let pot = Potential::DoubleWell;
        let params = reference_params();
        let cfg = IntegratorConfig::default();
        let ens = make_ensemble(&wide_state(), &params, &SamplingConfig::new(1, 5)).unwrap();
        let evolved = evolve_ensemble(&ens, &pot, &cfg, 0.5).unwrap();
        let direct = evolve(&ens.packets[0], &pot, &params, &cfg, 0.5).unwrap();
        assert_eq!(evolved.packets[0], direct);
        assert_eq!(evolved.provenance.potential.as_deref(), Some("double-well"));
    }

    #[test]
    fn closed_evolution_keeps_amplitudes() {
        let params = DissipationParams::closed(1, 1.0 / 16.0).unwrap();
        let ens = make_ensemble(&wide_state(), &params, &SamplingConfig::new(50, 2)).unwrap();
        let out = evolve_ensemble(&ens, &Potential::harmonic_1d(1.0, 0.0, 0.0), &IntegratorConfig::default(), 1.0)
            .unwrap();
        assert!(out.packets.iter().zip(&ens.packets).all(|(a, b)| a.a == b.a));
    }

    #[test]
    fn harmonic_mean_rotation() {
        let m = 4000;
        let params = DissipationParams::closed(1, 1.0 / 16.0).unwrap();
        let init = GaussianState::new_1d(1.0, 0.5, [[0.2, 0.0], [0.0, 0.2]]).unwrap();
        let ens = make_ensemble(&init, &params, &SamplingConfig::new(m, 9)).unwrap();
        let out = evolve_ensemble(&ens, &Potential::harmonic_1d(1.0, 0.0, 0.0), &IntegratorConfig::default(), PI)
            .unwrap();
        let mf = m as f64;
        let qm = out.packets.iter().map(|p| p.q[0]).sum::<f64>() / mf;
        let pm = out.packets.iter().map(|p| p.p[0]).sum::<f64>() / mf;
        // Rotation by π maps the center to its negative and keeps Σ = 0.2 I.
        let tol = 4.0 * ((1.0 - 1.0 / 16.0) * 0.4 / mf).sqrt();
        assert!((qm + 1.0).abs() < tol && (pm + 0.5).abs() < tol);
    }

    #[test]
    fn failures_carry_packet_indices() {
        let params = DissipationParams::closed(1, 0.5).unwrap();
        let init = GaussianState::new_1d(0.0, 0.0, [[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let ens = make_ensemble(&init, &params, &SamplingConfig::new(20, 4)).unwrap();
        let cfg = IntegratorConfig {
            hessian_bound: Some(5.0),
            ..IntegratorConfig::default()
        };
        let err = evolve_ensemble(&ens, &Potential::DoubleWell, &cfg, 2.0).unwrap_err();
        let (j, _) = err.first_failure().expect("packet failure");
        assert!(*j < 20);
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(matches!(
            make_ensemble(&wide_state(), &reference_params(), &SamplingConfig::new(0, 1)),
            Err(SamplingError::InvalidConfig(_))
        ));
    }
}
