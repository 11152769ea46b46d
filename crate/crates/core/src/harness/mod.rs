//! Experiment orchestration: RMSE over repeats, convergence tables, the
//! ε-independence check, the finite-domain stability comparison and
//! steady-state detection.

mod config;
mod io;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use config::{
    parse_observable, DissipationConfig, ExperimentConfig, ExperimentSpec, GridReferenceConfig, InitialConfig,
    NamedObservable, PotentialConfig, ReconstructionConfig, ReferenceChoice, StabilityConfig, SteadyStateConfig,
};
pub use io::{format_sig, read_grid_dump, write_grid_csv, write_grid_dump, GRID_DUMP_MAGIC, GRID_DUMP_VERSION};

use crate::dynamics::{evolve_on, DynamicsError, IntegratorConfig, Stepper, Wavepacket};
use crate::gaussian::GaussianError;
use crate::params::{DissipationParams, ParamError};
use crate::parallel::with_workers;
use crate::potential::PotentialError;
use crate::reference_gaussian::{reference_observable, ReferenceError, DEFAULT_REFERENCE_DT};
use crate::reference_grid::{
    boundary_mass_fraction, grid_expectation, grid_mass, solve_grid, GridError, GridSolverConfig, PeriodicAxis,
};
use crate::sampling::{
    ensemble_observable, evolve_ensemble, evolve_ensemble_with_checkpoints, initial_amplitude, make_ensemble,
    packet_normals, packet_observable, reconstruct, GridAxis, GridSpec, PacketEnsemble, SamplingConfig,
    SamplingError, WignerField,
};
use crate::stats;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("repeat {repeat}: {source}")]
    Repeat { repeat: usize, source: SamplingError },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

impl HarnessError {
    pub fn kind(&self) -> ErrorKind {
        fn sampling(e: &SamplingError) -> ErrorKind {
            match e {
                SamplingError::Io(_) => ErrorKind::Io,
                SamplingError::Dynamics(d) => dynamics(d),
                SamplingError::PacketFailures { .. } | SamplingError::Factorization => ErrorKind::Numerical,
                _ => ErrorKind::Validation,
            }
        }
        fn dynamics(e: &DynamicsError) -> ErrorKind {
            match e {
                DynamicsError::InvalidConfig(_)
                | DynamicsError::DimensionMismatch { .. }
                | DynamicsError::TimeReversal { .. } => ErrorKind::Validation,
                _ => ErrorKind::Numerical,
            }
        }
        match self {
            HarnessError::Config(_)
            | HarnessError::Params(_)
            | HarnessError::Potential(_)
            | HarnessError::Gaussian(_) => ErrorKind::Validation,
            HarnessError::Sampling(e) => sampling(e),
            HarnessError::Repeat { source, .. } => sampling(source),
            HarnessError::Reference(e) => match e {
                ReferenceError::NotPositiveDefinite(_) => ErrorKind::Numerical,
                ReferenceError::Observable(s) => sampling(s),
                _ => ErrorKind::Validation,
            },
            HarnessError::Grid(e) => match e {
                GridError::NonFinite(_) | GridError::ImaginaryResidue { .. } => ErrorKind::Numerical,
                _ => ErrorKind::Validation,
            },
            HarnessError::Io(_) => ErrorKind::Io,
        }
    }
}

/// Seed of repeat `r`: `master ⊕ r`.
pub fn repeat_seed(master: u64, r: usize) -> u64 {
    master ^ r as u64
}

/// One table cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RmseEstimate {
    pub rmse: f64,
    /// Jackknife standard error of `rmse` over repeats.
    pub stderr: f64,
    /// Mean absolute deviation over repeats.
    pub mae: f64,
    /// Reference value; `None` when deviations are taken from the mean.
    pub reference: Option<f64>,
}

impl RmseEstimate {
    /// Summarizes repeat estimates against `reference`, or against their own
    /// mean (unbiased sample standard deviation) when there is none.
    pub fn from_estimates(estimates: &[f64], reference: Option<f64>) -> Self {
        match reference {
            Some(r) => {
                let dev: Vec<f64> = estimates.iter().map(|e| e - r).collect();
                let abs: Vec<f64> = dev.iter().map(|d| d.abs()).collect();
                Self {
                    rmse: stats::rms(&dev),
                    stderr: stats::jackknife_stderr(&dev, stats::rms),
                    mae: stats::mean(&abs),
                    reference,
                }
            }
            None => {
                let sd = |v: &[f64]| stats::sample_variance(v).unwrap_or(0.0).sqrt();
                let m = stats::mean(estimates);
                let abs: Vec<f64> = estimates.iter().map(|e| (e - m).abs()).collect();
                Self {
                    rmse: sd(estimates),
                    stderr: stats::jackknife_stderr(estimates, sd),
                    mae: stats::mean(&abs),
                    reference: None,
                }
            }
        }
    }
}

/// Reference values of every observable of `spec` at `t_final`.
pub fn reference_values(spec: &ExperimentSpec, epsilon: f64) -> Result<Option<Vec<f64>>, HarnessError> {
    let params = spec.params_at(epsilon)?;
    match spec.reference {
        ReferenceChoice::None => Ok(None),
        ReferenceChoice::Gaussian => spec
            .observables
            .iter()
            .map(|o| {
                Ok(reference_observable(
                    &spec.initial,
                    &spec.potential,
                    &params,
                    spec.t_final,
                    &o.observable,
                    DEFAULT_REFERENCE_DT,
                )?)
            })
            .collect::<Result<Vec<_>, HarnessError>>()
            .map(Some),
        ReferenceChoice::Grid => {
            let g = &spec.grid;
            let cfg = GridSolverConfig {
                x: PeriodicAxis::new(g.x[0], g.x[1], g.points),
                xi: PeriodicAxis::new(g.xi[0], g.xi[1], g.points),
                dt: g.dt,
                t_final: spec.t_final,
                checkpoints: Vec::new(),
                workers: spec.workers,
            };
            info!("grid reference: eps = {epsilon}, {} points, dt = {}", g.points, g.dt);
            let sol = solve_grid(&spec.initial, &spec.potential, &params, &cfg)?;
            Ok(Some(
                spec.observables
                    .iter()
                    .map(|o| grid_expectation(&sol.final_field, |x, xi| o.observable.eval(&[x, xi])))
                    .collect(),
            ))
        }
    }
}

/// Ensemble estimates `[observable][repeat]` for `n_repeat` independent
/// runs of `m` packets.
pub fn repeat_estimates(
    spec: &ExperimentSpec,
    m: usize,
    epsilon: f64,
) -> Result<Vec<Vec<f64>>, HarnessError> {
    let params = spec.params_at(epsilon)?;
    let icfg = IntegratorConfig::with_dt(spec.dt);
    Stepper::open(&spec.potential, &params, &icfg).map_err(SamplingError::from)?;
    let setup = RepeatSetup::new(spec, &params)?;
    let per_repeat: Vec<Result<Vec<f64>, HarnessError>> = with_workers(spec.workers, || {
        (0..spec.n_repeat)
            .into_par_iter()
            .map_init(
                || Stepper::open(&spec.potential, &params, &icfg).expect("validated above"),
                |stepper, r| setup.run(stepper, m, repeat_seed(spec.seed, r), r),
            )
            .collect()
    });
    let mut out = vec![Vec::with_capacity(spec.n_repeat); spec.observables.len()];
    for r in per_repeat {
        for (k, v) in r?.into_iter().enumerate() {
            out[k].push(v);
        }
    }
    Ok(out)
}

/// Serial single-repeat path, so that repeats can run concurrently.
struct RepeatSetup<'a> {
    spec: &'a ExperimentSpec,
    epsilon: f64,
    chol: nalgebra::DMatrix<f64>,
    g0: nalgebra::DMatrix<f64>,
    a0: f64,
}

impl<'a> RepeatSetup<'a> {
    fn new(spec: &'a ExperimentSpec, params: &DissipationParams) -> Result<Self, HarnessError> {
        let cov = spec.initial.cov();
        let eps = params.epsilon();
        let chol = (cov * (1.0 - eps)).cholesky().ok_or(SamplingError::Factorization)?.l();
        let g0 = cov.clone().cholesky().ok_or(SamplingError::Factorization)?.inverse();
        let g0 = 0.5 * (&g0 + g0.transpose());
        Ok(Self {
            spec,
            epsilon: eps,
            chol,
            g0,
            a0: initial_amplitude(eps, spec.dim(), cov),
        })
    }

    fn run(&self, stepper: &mut Stepper, m: usize, seed: u64, repeat: usize) -> Result<Vec<f64>, HarnessError> {
        let n = self.spec.dim();
        let mean = self.spec.initial.mean();
        let nobs = self.spec.observables.len();
        let mut values = vec![Vec::with_capacity(m); nobs];
        let mut failures = Vec::new();
        let mut u = vec![0.0; 2 * n];
        for j in 0..m {
            packet_normals(seed, j as u64, &mut u);
            let z = mean + &self.chol * DVector::from_column_slice(&u);
            let wp = Wavepacket::new(
                z.rows(0, n).into_owned(),
                z.rows(n, n).into_owned(),
                self.g0.clone(),
                self.a0,
                0.0,
            );
            match evolve_on(stepper, &wp, self.spec.t_final, &[]) {
                Ok(traj) => {
                    for (k, o) in self.spec.observables.iter().enumerate() {
                        values[k].push(packet_observable(&traj.final_state, &o.observable, self.epsilon)?);
                    }
                }
                Err(e) => failures.push((j, e)),
            }
        }
        if !failures.is_empty() {
            return Err(HarnessError::Repeat {
                repeat,
                source: SamplingError::PacketFailures { total: m, failures },
            });
        }
        Ok(values.iter().map(|v| stats::mean(v)).collect())
    }
}

/// RMSE of one observable's `M`-sample estimate over `n_repeat` repeats.
pub fn estimate_rmse(
    spec: &ExperimentSpec,
    m: usize,
    epsilon: f64,
    observable: usize,
) -> Result<RmseEstimate, HarnessError> {
    if observable >= spec.observables.len() {
        return Err(HarnessError::Config(format!("no observable #{observable}")));
    }
    let reference = reference_values(spec, epsilon)?;
    let estimates = repeat_estimates(spec, m, epsilon)?;
    Ok(RmseEstimate::from_estimates(
        &estimates[observable],
        reference.map(|r| r[observable]),
    ))
}

/// Error table of one observable: rows `M`, columns `ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorTable {
    pub observable: String,
    pub samples: Vec<usize>,
    pub epsilons: Vec<f64>,
    /// `cells[row][col]`
    pub cells: Vec<Vec<RmseEstimate>>,
}

impl ErrorTable {
    pub fn column(&self, col: usize) -> Vec<f64> {
        self.cells.iter().map(|row| row[col].rmse).collect()
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.cells[row].iter().map(|c| c.rmse).collect()
    }

    /// Log–log slope of RMSE against `M` for each ε column.
    pub fn slopes(&self) -> Vec<Option<f64>> {
        let ms: Vec<f64> = self.samples.iter().map(|&m| m as f64).collect();
        (0..self.epsilons.len())
            .map(|c| stats::loglog_slope(&ms, &self.column(c)))
            .collect()
    }

    /// Mean of `error(M)/error(4M)` over every pair present in the table.
    pub fn mean_quadrupling_ratio(&self) -> Option<f64> {
        let mut ratios = Vec::new();
        for (i, &m) in self.samples.iter().enumerate() {
            if let Some(j) = self.samples.iter().position(|&k| k == 4 * m) {
                for c in 0..self.epsilons.len() {
                    ratios.push(self.cells[i][c].rmse / self.cells[j][c].rmse);
                }
            }
        }
        (!ratios.is_empty()).then(|| stats::mean(&ratios))
    }

    /// CSV with header `M,eps,rmse,stderr,slope_hint`.
    pub fn to_csv(&self) -> String {
        let slopes = self.slopes();
        let mut s = String::from("M,eps,rmse,stderr,slope_hint\n");
        for (i, m) in self.samples.iter().enumerate() {
            for (c, eps) in self.epsilons.iter().enumerate() {
                let cell = &self.cells[i][c];
                let slope = slopes[c].map(format_sig).unwrap_or_default();
                s.push_str(&format!(
                    "{m},{},{},{},{slope}\n",
                    format_sig(*eps),
                    format_sig(cell.rmse),
                    format_sig(cell.stderr)
                ));
            }
        }
        s
    }
}

/// Fills the `M × ε` tables of every observable.
pub fn convergence_tables(spec: &ExperimentSpec) -> Result<Vec<ErrorTable>, HarnessError> {
    let (nm, ne) = (spec.samples.len(), spec.epsilons.len());
    let mut cells = vec![vec![vec![None; ne]; nm]; spec.observables.len()];
    for (c, &eps) in spec.epsilons.iter().enumerate() {
        let reference = reference_values(spec, eps)?;
        for (i, &m) in spec.samples.iter().enumerate() {
            info!("{}: M = {m}, eps = {eps}, {} repeats", spec.name, spec.n_repeat);
            let est = repeat_estimates(spec, m, eps)?;
            for (k, values) in est.iter().enumerate() {
                cells[k][i][c] = Some(RmseEstimate::from_estimates(values, reference.as_ref().map(|r| r[k])));
            }
        }
    }
    Ok(spec
        .observables
        .iter()
        .zip(cells)
        .map(|(o, table)| ErrorTable {
            observable: o.name.clone(),
            samples: spec.samples.clone(),
            epsilons: spec.epsilons.clone(),
            cells: table
                .into_iter()
                .map(|row| row.into_iter().map(|c| c.expect("filled")).collect())
                .collect(),
        })
        .collect())
}

/// The table of the first observable.
pub fn convergence_table(spec: &ExperimentSpec) -> Result<ErrorTable, HarnessError> {
    Ok(convergence_tables(spec)?.swap_remove(0))
}

/// Writes `<name>_<observable>.csv` for each table; returns the paths.
pub fn write_tables(dir: &Path, name: &str, tables: &[ErrorTable]) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    tables
        .iter()
        .map(|t| {
            let path = dir.join(format!("{name}_{}.csv", t.observable));
            fs::write(&path, t.to_csv())?;
            Ok(path)
        })
        .collect()
}

pub const DEFAULT_SPREAD_THRESHOLD: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowSpread {
    pub samples: usize,
    /// `max/min − 1` across ε.
    pub spread: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonReport {
    pub observable: String,
    pub threshold: f64,
    pub rows: Vec<RowSpread>,
    /// `√((1−ε_max)/(1−ε_min))`, the predicted `error(ε_max)/error(ε_min)`.
    pub predicted_ratio: f64,
    /// Geometric mean over rows of the observed ratio.
    pub observed_ratio: f64,
    /// Three combined standard errors of the observed ratio, at least 5%.
    pub ratio_tolerance: f64,
    pub ratio_consistent: bool,
    pub all_rows_pass: bool,
}

pub fn epsilon_independence_report(table: &ErrorTable) -> EpsilonReport {
    epsilon_independence_report_with(table, DEFAULT_SPREAD_THRESHOLD)
}

pub fn epsilon_independence_report_with(table: &ErrorTable, threshold: f64) -> EpsilonReport {
    let rows: Vec<RowSpread> = table
        .samples
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let r = table.row(i);
            let max = r.iter().cloned().fold(f64::MIN, f64::max);
            let min = r.iter().cloned().fold(f64::MAX, f64::min);
            let spread = max / min - 1.0;
            RowSpread {
                samples: m,
                spread,
                flagged: !(spread <= threshold),
            }
        })
        .collect();

    let (hi, lo) = extreme_columns(&table.epsilons);
    let predicted = ((1.0 - table.epsilons[hi]) / (1.0 - table.epsilons[lo])).sqrt();
    let mut log_ratios = Vec::new();
    let mut rel_var = Vec::new();
    for row in &table.cells {
        let (a, b) = (&row[hi], &row[lo]);
        log_ratios.push((a.rmse / b.rmse).ln());
        rel_var.push((a.stderr / a.rmse).powi(2) + (b.stderr / b.rmse).powi(2));
    }
    let observed = stats::mean(&log_ratios).exp();
    let sigma = stats::pairwise_sum(&rel_var).sqrt() / rel_var.len() as f64;
    let tolerance = (3.0 * sigma).max(0.05);
    EpsilonReport {
        observable: table.observable.clone(),
        threshold,
        all_rows_pass: rows.iter().all(|r| !r.flagged),
        rows,
        predicted_ratio: predicted,
        observed_ratio: observed,
        ratio_tolerance: tolerance,
        ratio_consistent: (observed / predicted - 1.0).abs() <= tolerance,
    }
}

/// Indices of the largest and smallest ε.
fn extreme_columns(eps: &[f64]) -> (usize, usize) {
    let mut hi = 0;
    let mut lo = 0;
    for (i, &e) in eps.iter().enumerate() {
        if e > eps[hi] {
            hi = i;
        }
        if e < eps[lo] {
            lo = i;
        }
    }
    (hi, lo)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainRun {
    pub bounds: [f64; 2],
    pub points: usize,
    pub dt: f64,
    pub boundary_fraction: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub t_final: f64,
    pub epsilon: f64,
    pub small: DomainRun,
    pub large: DomainRun,
    pub fgs_samples: usize,
    pub fgs_mass_min: f64,
    pub fgs_mass_max: f64,
    /// `(name, estimate)` of each observable from the packet ensemble.
    pub fgs_observables: Vec<(String, f64)>,
    /// The same observables from the large-domain grid run.
    pub grid_observables: Vec<(String, f64)>,
    pub artifacts: Vec<PathBuf>,
}

/// Grid runs on the small and large boxes plus one packet ensemble, all to
/// the stability horizon at the first ε of the spec.
pub fn stability_study(spec: &ExperimentSpec) -> Result<StabilityReport, HarnessError> {
    if spec.dim() != 1 {
        return Err(HarnessError::Config("the stability study is one-dimensional".into()));
    }
    let st = &spec.stability;
    let eps = spec.epsilons[0];
    let params = spec.params_at(eps)?;
    let run_box = |bounds: [f64; 2], points: usize, dt: f64| -> Result<(DomainRun, WignerField), HarnessError> {
        let axis = PeriodicAxis::new(bounds[0], bounds[1], points);
        let cfg = GridSolverConfig {
            x: axis,
            xi: axis,
            dt,
            t_final: st.t_final,
            checkpoints: Vec::new(),
            workers: spec.workers,
        };
        info!("stability: grid run on [{}, {}]^2", bounds[0], bounds[1]);
        let sol = solve_grid(&spec.initial, &spec.potential, &params, &cfg)?;
        let f = sol.final_field;
        Ok((
            DomainRun {
                bounds,
                points,
                dt,
                boundary_fraction: boundary_mass_fraction(&f),
                mass: grid_mass(&f),
            },
            f,
        ))
    };
    let (small, small_field) = run_box(st.small, st.small_points, st.small_dt)?;
    let (large, large_field) = run_box(st.large, st.large_points, st.large_dt)?;

    info!("stability: packet ensemble, M = {}", st.samples);
    let scfg = SamplingConfig::new(st.samples, spec.seed).with_workers(spec.workers);
    let ens = make_ensemble(&spec.initial, &params, &scfg)?;
    let icfg = IntegratorConfig::with_dt(spec.dt);
    let ens = evolve_ensemble(&ens, &spec.potential, &icfg, st.t_final)?;
    let masses = ens.masses();
    let fgs_observables = spec
        .observables
        .iter()
        .map(|o| Ok((o.name.clone(), ensemble_observable(&ens, &o.observable)?.estimate)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let grid_observables: Vec<(String, f64)> = spec
        .observables
        .iter()
        .map(|o| {
            let v = grid_expectation(&large_field, |x, xi| o.observable.eval(&[x, xi]));
            (o.name.clone(), v)
        })
        .collect();

    let mut artifacts = Vec::new();
    if let Some(dir) = &spec.output_dir {
        let big = st.large;
        let grid = GridSpec::new(vec![GridAxis::new(big[0], big[1], spec.reconstruction.points); 2]);
        let fgs_field = reconstruct(&ens, &grid)?;
        for (stem, field) in [("grid_small", &small_field), ("grid_large", &large_field), ("fgs", &fgs_field)] {
            artifacts.push(dump_field(dir, &format!("{}_{stem}", spec.name), field)?);
        }
    }
    Ok(StabilityReport {
        t_final: st.t_final,
        epsilon: eps,
        small,
        large,
        fgs_samples: st.samples,
        fgs_mass_min: masses.iter().cloned().fold(f64::INFINITY, f64::min),
        fgs_mass_max: masses.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        fgs_observables,
        grid_observables,
        artifacts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyStateReport {
    pub times: Vec<f64>,
    /// `‖W(t_{k+1}) − W(t_k)‖ / ‖W(t_{k+1})‖` for consecutive checkpoints.
    pub differences: Vec<f64>,
    pub converged: bool,
    pub threshold: f64,
    pub artifacts: Vec<PathBuf>,
}

impl SteadyStateReport {
    /// Converged when the last difference is below `threshold` and the
    /// differences do not increase over the last two intervals.
    pub fn assess(times: Vec<f64>, differences: Vec<f64>, threshold: f64) -> Self {
        let converged = match differences.as_slice() {
            [] => false,
            [d] => *d < threshold,
            [.., a, b] => *b < threshold && b <= a,
        };
        Self {
            times,
            differences,
            converged,
            threshold,
            artifacts: Vec::new(),
        }
    }
}

/// Reconstructs one packet ensemble at each steady-state checkpoint and
/// compares consecutive fields.
pub fn steady_state_study(spec: &ExperimentSpec) -> Result<SteadyStateReport, HarnessError> {
    let ss = &spec.steady_state;
    let eps = spec.epsilons[0];
    let params = spec.params_at(eps)?;
    let scfg = SamplingConfig::new(ss.samples, spec.seed).with_workers(spec.workers);
    let ens = make_ensemble(&spec.initial, &params, &scfg)?;
    let icfg = IntegratorConfig::with_dt(spec.dt);
    let (last, earlier) = ss.checkpoints.split_last().expect("validated non-empty");
    info!("steady state: M = {}, t = {:?}", ss.samples, ss.checkpoints);
    let stages: Vec<PacketEnsemble> =
        evolve_ensemble_with_checkpoints(&ens, &spec.potential, &icfg, *last, earlier)?;
    let grid = spec.reconstruction_grid();
    let fields = stages
        .iter()
        .map(|e| reconstruct(e, &grid))
        .collect::<Result<Vec<_>, _>>()?;
    let differences = fields
        .windows(2)
        .map(|w| w[0].relative_l2_difference(&w[1]).expect("shared grid"))
        .collect();
    let mut report = SteadyStateReport::assess(ss.checkpoints.clone(), differences, ss.threshold);
    if let Some(dir) = &spec.output_dir {
        for f in &fields {
            report
                .artifacts
                .push(dump_field(dir, &format!("{}_t{}", spec.name, format_sig(f.time)), f)?);
        }
    }
    Ok(report)
}

/// Writes `<stem>.wfg` and the `<stem>.csv` sidecar.
pub fn dump_field(dir: &Path, stem: &str, field: &WignerField) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.wfg"));
    write_grid_dump(BufWriter::new(File::create(&path)?), field)?;
    write_grid_csv(BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?), field)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(extra: &str) -> ExperimentSpec {
        let text = format!(
            r#"
name = "unit"
t_final = 0.0
n_repeat = 200
seed = 7
samples = [50]
epsilons = [0.0625]
reference = "none"
{extra}

[potential]
kind = "harmonic"
a2 = [[1.0]]
a1 = [1.0]

[dissipation]
alpha = [0.4]
beta = [0.1]
gamma_im = [-1.0]
mu = [1.0]

[initial]
mean = [-0.1, 0.2]
cov = [[0.2, 0.0], [0.0, 0.2]]
"#
        );
        ExperimentSpec::from_toml_str(&text).unwrap()
    }

    #[test]
    fn initial_sampling_spread_matches_exact_value() {
        let s = spec("");
        let est = estimate_rmse(&s, 50, 0.0625, 0).unwrap();
        let exact = ((1.0 - 0.0625) * 0.2 / 50.0_f64).sqrt();
        assert!((est.rmse - exact).abs() < 3.0 * est.stderr, "{est:?} vs {exact}");
        assert!(est.stderr > 0.0 && est.stderr < 0.15 * est.rmse);
    }

    #[test]
    fn repeats_use_xor_seeds_and_are_worker_independent() {
        assert_eq!(repeat_seed(0b1010, 3), 0b1001);
        let mut s = spec("");
        s.n_repeat = 9;
        let one = repeat_estimates(&s, 20, 0.0625).unwrap();
        s.workers = 3;
        let three = repeat_estimates(&s, 20, 0.0625).unwrap();
        assert_eq!(one, three);
    }

    #[test]
    fn repeat_matches_ensemble_path() {
        let mut s = spec("");
        s.t_final = 0.3;
        s.n_repeat = 2;
        let est = repeat_estimates(&s, 17, 0.0625).unwrap();
        let params = s.params_at(0.0625).unwrap();
        let ens = make_ensemble(&s.initial, &params, &SamplingConfig::new(17, repeat_seed(7, 1))).unwrap();
        let ens = evolve_ensemble(&ens, &s.potential, &IntegratorConfig::default(), 0.3).unwrap();
        let direct = ensemble_observable(&ens, &s.observables[1].observable).unwrap().estimate;
        assert_eq!(est[1][1], direct);
    }

    #[test]
    fn rmse_against_reference() {
        let e = RmseEstimate::from_estimates(&[1.0, 3.0], Some(2.0));
        assert_eq!(e.rmse, 1.0);
        assert_eq!(e.mae, 1.0);
        let e = RmseEstimate::from_estimates(&[1.0, 3.0, 2.0], None);
        assert_eq!(e.rmse, 1.0);
    }

    fn synthetic(eps: Vec<f64>, f: impl Fn(usize, f64) -> f64) -> ErrorTable {
        let samples = vec![100, 200, 400, 800, 1600];
        let cells = samples
            .iter()
            .map(|&m| {
                eps.iter()
                    .map(|&e| RmseEstimate {
                        rmse: f(m, e),
                        stderr: 0.01 * f(m, e),
                        mae: 0.0,
                        reference: Some(0.0),
                    })
                    .collect()
            })
            .collect();
        ErrorTable {
            observable: "x".into(),
            samples,
            epsilons: eps,
            cells,
        }
    }

    #[test]
    fn ideal_table_statistics() {
        let eps = vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let t = synthetic(eps, |m, e| 0.3 * ((1.0 - e) / m as f64).sqrt());
        for s in t.slopes() {
            assert!((s.unwrap() + 0.5).abs() < 1e-12);
        }
        assert!((t.mean_quadrupling_ratio().unwrap() - 2.0).abs() < 1e-12);
        let r = epsilon_independence_report(&t);
        assert!(r.all_rows_pass && r.ratio_consistent);
        let expected = (15.0_f64 / 16.0 / (127.0 / 128.0)).sqrt();
        assert!((r.predicted_ratio - expected).abs() < 1e-12);
        assert!((expected - 0.972).abs() < 0.005);
    }

    #[test]
    fn inverse_epsilon_errors_are_flagged() {
        let eps = vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let t = synthetic(eps, |m, e| 0.01 / e / (m as f64).sqrt());
        let r = epsilon_independence_report(&t);
        assert!(r.rows.iter().all(|row| row.flagged));
        assert!(!r.ratio_consistent);
    }

    #[test]
    fn csv_layout() {
        let t = synthetic(vec![0.0625], |m, _| 1.0 / (m as f64).sqrt());
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("M,eps,rmse,stderr,slope_hint"));
        assert_eq!(lines.next(), Some("100,0.0625,0.1,0.001,-0.5"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn steady_state_assessment() {
        let r = SteadyStateReport::assess(vec![5.0, 10.0, 15.0, 20.0], vec![0.3, 0.05, 0.01], 0.05);
        assert!(r.converged);
        let r = SteadyStateReport::assess(vec![5.0, 10.0, 15.0, 20.0], vec![0.3, 0.01, 0.02], 0.05);
        assert!(!r.converged);
        let r = SteadyStateReport::assess(vec![5.0, 10.0], vec![0.2], 0.05);
        assert!(!r.converged);
    }

    #[test]
    fn closed_harmonic_never_settles() {
        let mut s = spec("");
        s.params = DissipationParams::closed(1, 0.0625).unwrap();
        s.steady_state.samples = 200;
        s.reconstruction.points = 48;
        let r = steady_state_study(&s).unwrap();
        assert!(!r.converged, "{r:?}");
        assert_eq!(r.differences.len(), 3);
    }

    #[test]
    fn error_kinds() {
        assert_eq!(HarnessError::Config("x".into()).kind(), ErrorKind::Validation);
        let e = HarnessError::Sampling(SamplingError::Dynamics(DynamicsError::NonFinite { t: 1.0 }));
        assert_eq!(e.kind(), ErrorKind::Numerical);
        let e = HarnessError::Io(std::io::Error::other("x"));
        assert_eq!(e.kind(), ErrorKind::Io);
    }
}
