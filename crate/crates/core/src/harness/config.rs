//! Experiment files: TOML with nested sections, unknown keys rejected.
//!
//! ```toml
//! name = "example1"
//! t_final = 1.0
//! dt = 0.01
//! n_repeat = 500
//! seed = 1
//! samples = [100, 200, 400, 800, 1600]
//! epsilons = [0.0625, 0.03125, 0.015625, 0.0078125]
//! observables = ["x", "xi"]
//! reference = "gaussian"        # gaussian | grid | none
//! output_dir = "out/example1"
//!
//! [potential]
//! kind = "harmonic"             # harmonic | double-well | triple-well | near-harmonic
//! a2 = [[1.0]]                  # V = ½ xᵀA₂x + a₁·x + a₀
//! a1 = [1.0]
//! a0 = 0.0
//!
//! [dissipation]
//! alpha = [0.4]
//! beta = [0.1]
//! gamma_re = [0.0]
//! gamma_im = [-1.0]
//! mu = [1.0]
//!
//! [initial]
//! mean = [-0.1, 0.2]
//! cov = [[0.2, 0.0], [0.0, 0.2]]
//! ```
//!
//! Optional sections `[grid]`, `[reconstruction]`, `[stability]` and
//! `[steady_state]` have the defaults of [`GridReferenceConfig`],
//! [`ReconstructionConfig`], [`StabilityConfig`] and [`SteadyStateConfig`].

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::gaussian::GaussianState;
use crate::params::DissipationParams;
use crate::potential::Potential;
use crate::reference_grid::PeriodicAxis;
use crate::sampling::{GridSpec, Observable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_repeats")]
    pub n_repeat: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub samples: Vec<usize>,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_observables")]
    pub observables: Vec<String>,
    #[serde(default)]
    pub reference: ReferenceChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub potential: PotentialConfig,
    #[serde(default)]
    pub dissipation: DissipationConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub grid: GridReferenceConfig,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub steady_state: SteadyStateConfig,
}

fn default_dt() -> f64 {
    0.01
}
fn default_repeats() -> usize {
    100
}
fn default_workers() -> usize {
    1
}
fn default_observables() -> Vec<String> {
    vec!["x".into(), "xi".into()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceChoice {
    /// Exact moments; quadratic potentials only.
    #[default]
    Gaussian,
    /// Periodic split-step grid solver; n = 1 only.
    Grid,
    /// Deviations from the mean over repeats.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a2: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationConfig {
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub gamma_re: Vec<f64>,
    #[serde(default)]
    pub gamma_im: Vec<f64>,
    #[serde(default)]
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// Periodic reference grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridReferenceConfig {
    #[serde(default = "default_box")]
    pub x: [f64; 2],
    #[serde(default = "default_box")]
    pub xi: [f64; 2],
    #[serde(default = "default_grid_points")]
    pub points: usize,
    #[serde(default = "default_grid_dt")]
    pub dt: f64,
}

fn default_box() -> [f64; 2] {
    [-4.0, 4.0]
}
fn default_grid_points() -> usize {
    256
}
fn default_grid_dt() -> f64 {
    1e-3
}

impl Default for GridReferenceConfig {
    fn default() -> Self {
        Self {
            x: default_box(),
            xi: default_box(),
            points: default_grid_points(),
            dt: default_grid_dt(),
        }
    }
}

/// Grid on which ensembles are reconstructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionConfig {
    #[serde(default = "default_box")]
    pub x: [f64; 2],
    #[serde(default = "default_box")]
    pub xi: [f64; 2],
    #[serde(default = "default_reconstruction_points")]
    pub points: usize,
}

fn default_reconstruction_points() -> usize {
    128
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            x: default_box(),
            xi: default_box(),
            points: default_reconstruction_points(),
        }
    }
}

/// Two periodic boxes, each with its own resolution and step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    #[serde(default = "default_small_box")]
    pub small: [f64; 2],
    #[serde(default = "default_grid_points")]
    pub small_points: usize,
    #[serde(default = "default_grid_dt")]
    pub small_dt: f64,
    #[serde(default = "default_large_box")]
    pub large: [f64; 2],
    #[serde(default = "default_grid_points")]
    pub large_points: usize,
    #[serde(default = "default_grid_dt")]
    pub large_dt: f64,
    #[serde(default = "default_stability_time")]
    pub t_final: f64,
    #[serde(default = "default_study_samples")]
    pub samples: usize,
}

fn default_small_box() -> [f64; 2] {
    [-5.0, 5.0]
}
fn default_large_box() -> [f64; 2] {
    [-8.0, 8.0]
}
fn default_stability_time() -> f64 {
    8.0
}
fn default_study_samples() -> usize {
    3200
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            small: default_small_box(),
            small_points: default_grid_points(),
            small_dt: default_grid_dt(),
            large: default_large_box(),
            large_points: default_grid_points(),
            large_dt: default_grid_dt(),
            t_final: default_stability_time(),
            samples: default_study_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyStateConfig {
    #[serde(default = "default_steady_checkpoints")]
    pub checkpoints: Vec<f64>,
    #[serde(default = "default_steady_threshold")]
    pub threshold: f64,
    #[serde(default = "default_study_samples")]
    pub samples: usize,
}

fn default_steady_checkpoints() -> Vec<f64> {
    vec![5.0, 10.0, 15.0, 20.0]
}
fn default_steady_threshold() -> f64 {
    0.05
}

impl Default for SteadyStateConfig {
    fn default() -> Self {
        Self {
            checkpoints: default_steady_checkpoints(),
            threshold: default_steady_threshold(),
            samples: default_study_samples(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.message().to_string()))
    }

    pub fn from_value(value: toml::Value) -> Result<Self, HarnessError> {
        value
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.message().to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }
}

/// A named observable.
#[derive(Debug, Clone)]
pub struct NamedObservable {
    pub name: String,
    pub observable: Observable,
}

/// Parses `x`, `xi`, `x2`, `xi2`, optionally suffixed `_k` for component k.
pub fn parse_observable(name: &str, n: usize) -> Result<NamedObservable, HarnessError> {
    let (base, k) = match name.split_once('_') {
        Some((b, k)) => (
            b,
            k.parse::<usize>()
                .map_err(|_| HarnessError::Config(format!("bad observable component in `{name}`")))?,
        ),
        None => (name, 0),
    };
    if k >= n {
        return Err(HarnessError::Config(format!(
            "observable `{name}` refers to component {k}, but n = {n}"
        )));
    }
    let observable = match base {
        "x" => Observable::position(n, k),
        "xi" => Observable::momentum(n, k),
        "x2" => Observable::position_squared(n, k),
        "xi2" => Observable::momentum_squared(n, k),
        _ => return Err(HarnessError::Config(format!("unknown observable `{name}`"))),
    };
    Ok(NamedObservable {
        name: name.to_string(),
        observable,
    })
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub potential: Potential,
    /// Parameters at the first ε of the scan.
    pub params: DissipationParams,
    pub initial: GaussianState,
    pub observables: Vec<NamedObservable>,
    pub samples: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub t_final: f64,
    pub dt: f64,
    pub n_repeat: usize,
    pub seed: u64,
    pub workers: usize,
    pub reference: ReferenceChoice,
    pub output_dir: Option<PathBuf>,
    pub grid: GridReferenceConfig,
    pub reconstruction: ReconstructionConfig,
    pub stability: StabilityConfig,
    pub steady_state: SteadyStateConfig,
}

impl ExperimentSpec {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if cfg.epsilons.is_empty() {
            return bad("`epsilons` is empty".into());
        }
        if cfg.samples.is_empty() || cfg.samples.contains(&0) {
            return bad("`samples` must be non-empty and positive".into());
        }
        if cfg.n_repeat == 0 {
            return bad("`n_repeat` must be >= 1".into());
        }
        if cfg.workers == 0 {
            return bad("`workers` must be >= 1".into());
        }
        if !(cfg.t_final >= 0.0 && cfg.t_final.is_finite()) {
            return bad(format!("`t_final` = {}", cfg.t_final));
        }
        if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
            return bad(format!("`dt` = {}", cfg.dt));
        }

        let initial = initial_state(&cfg.initial)?;
        let n = initial.dim();
        let potential = potential(&cfg.potential, n)?;
        let params = dissipation(&cfg.dissipation, n, cfg.epsilons[0])?;
        for &eps in &cfg.epsilons[1..] {
            params.with_epsilon(eps)?;
        }
        let observables = cfg
            .observables
            .iter()
            .map(|o| parse_observable(o, n))
            .collect::<Result<Vec<_>, _>>()?;
        if observables.is_empty() {
            return bad("`observables` is empty".into());
        }

        match cfg.reference {
            ReferenceChoice::Gaussian if !potential.is_quadratic() => {
                return bad(format!(
                    "reference = \"gaussian\" needs a harmonic potential, got {}",
                    potential.label()
                ))
            }
            ReferenceChoice::Grid if n != 1 => return bad("reference = \"grid\" needs n = 1".into()),
            _ => {}
        }
        let g = &cfg.grid;
        PeriodicAxis::new(g.x[0], g.x[1], g.points).validate(0)?;
        PeriodicAxis::new(g.xi[0], g.xi[1], g.points).validate(1)?;
        if !(g.dt > 0.0) {
            return bad(format!("grid dt = {}", g.dt));
        }
        reconstruction_grid(&cfg.reconstruction, n)?.validate()?;
        let st = &cfg.steady_state;
        if st.checkpoints.is_empty() || st.checkpoints.windows(2).any(|w| w[1] <= w[0]) || st.checkpoints[0] < 0.0 {
            return bad("steady_state.checkpoints must be increasing and non-negative".into());
        }
        if !(st.threshold > 0.0) || st.samples == 0 {
            return bad("steady_state threshold and samples must be positive".into());
        }
        if cfg.stability.samples == 0 || !(cfg.stability.t_final >= 0.0) {
            return bad("stability samples and t_final must be positive".into());
        }

        Ok(Self {
            name: cfg.name.clone(),
            potential,
            params,
            initial,
            observables,
            samples: cfg.samples.clone(),
            epsilons: cfg.epsilons.clone(),
            t_final: cfg.t_final,
            dt: cfg.dt,
            n_repeat: cfg.n_repeat,
            seed: cfg.seed,
            workers: cfg.workers,
            reference: cfg.reference,
            output_dir: cfg.output_dir.clone(),
            grid: cfg.grid.clone(),
            reconstruction: cfg.reconstruction.clone(),
            stability: cfg.stability.clone(),
            steady_state: cfg.steady_state.clone(),
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        Self::from_config(&ExperimentConfig::from_toml_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        Self::from_config(&ExperimentConfig::from_path(path)?)
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    /// Parameters with the environment of this spec at `epsilon`.
    pub fn params_at(&self, epsilon: f64) -> Result<DissipationParams, HarnessError> {
        Ok(self.params.with_epsilon(epsilon)?)
    }

    pub fn reconstruction_grid(&self) -> GridSpec {
        reconstruction_grid(&self.reconstruction, self.dim()).expect("validated")
    }
}

fn reconstruction_grid(r: &ReconstructionConfig, n: usize) -> Result<GridSpec, HarnessError> {
    use crate::sampling::GridAxis;
    if n != 1 {
        return Err(HarnessError::Config(format!(
            "reconstruction grids are two-dimensional; n = {n}"
        )));
    }
    Ok(GridSpec::new(vec![
        GridAxis::new(r.x[0], r.x[1], r.points),
        GridAxis::new(r.xi[0], r.xi[1], r.points),
    ]))
}

fn initial_state(c: &InitialConfig) -> Result<GaussianState, HarnessError> {
    let d = c.mean.len();
    if d == 0 || d % 2 != 0 {
        return Err(HarnessError::Config(format!(
            "initial.mean has length {d}; expected 2n"
        )));
    }
    if c.cov.len() != d || c.cov.iter().any(|r| r.len() != d) {
        return Err(HarnessError::Config(format!("initial.cov must be {d}x{d}")));
    }
    let cov = DMatrix::from_fn(d, d, |i, j| c.cov[i][j]);
    Ok(GaussianState::new(DVector::from_vec(c.mean.clone()), cov)?)
}

fn potential(c: &PotentialConfig, n: usize) -> Result<Potential, HarnessError> {
    let needs_1d = |p: Potential| {
        if n == 1 {
            Ok(p)
        } else {
            Err(HarnessError::Config(format!("potential `{}` is one-dimensional; n = {n}", c.kind)))
        }
    };
    let no_coeffs = || {
        if c.a2.is_some() || c.a1.is_some() || c.a0.is_some() {
            Err(HarnessError::Config(format!(
                "potential `{}` takes no coefficients",
                c.kind
            )))
        } else {
            Ok(())
        }
    };
    match c.kind.as_str() {
        "harmonic" => {
            let a2 = c.a2.clone().unwrap_or_else(|| vec![vec![0.0; n]; n]);
            if a2.len() != n || a2.iter().any(|r| r.len() != n) {
                return Err(HarnessError::Config(format!("potential.a2 must be {n}x{n}")));
            }
            let a1 = c.a1.clone().unwrap_or_else(|| vec![0.0; n]);
            Ok(Potential::harmonic(
                DMatrix::from_fn(n, n, |i, j| a2[i][j]),
                DVector::from_vec(a1),
                c.a0.unwrap_or(0.0),
            )?)
        }
        "double-well" => no_coeffs().and_then(|_| needs_1d(Potential::DoubleWell)),
        "triple-well" => no_coeffs().and_then(|_| needs_1d(Potential::TripleWell)),
        "near-harmonic" => no_coeffs().and_then(|_| needs_1d(Potential::NearHarmonic)),
        other => Err(HarnessError::Config(format!("unknown potential kind `{other}`"))),
    }
}

fn dissipation(c: &DissipationConfig, n: usize, epsilon: f64) -> Result<DissipationParams, HarnessError> {
    let take = |v: &Vec<f64>, name: &str| -> Result<Vec<f64>, HarnessError> {
        match v.len() {
            0 => Ok(vec![0.0; n]),
            l if l == n => Ok(v.clone()),
            l => Err(HarnessError::Config(format!(
                "dissipation.{name} has length {l}; expected {n}"
            ))),
        }
    };
    let re = take(&c.gamma_re, "gamma_re")?;
    let im = take(&c.gamma_im, "gamma_im")?;
    let gamma = re.iter().zip(&im).map(|(&r, &i)| Complex64::new(r, i)).collect();
    Ok(DissipationParams::new(
        epsilon,
        take(&c.alpha, "alpha")?,
        take(&c.beta, "beta")?,
        gamma,
        take(&c.mu, "mu")?,
    )?)
}
