//! Wavepacket parameter flow and its fixed-step RK4 integrator.
//!
//! A packet is `A·exp(−T/(2ε))` with `T = (z − z₀)ᵀ G (z − z₀)`, `z₀ = (q, p)`.
//! The open-system flow is
//!
//! ```text
//! dG = KᵀG + GK − G(B−Γ₁)G,   K = Γ₂ + M̃ − C
//! dA = Tr(Γ₂ − ½(B−Γ₁)G)·A
//! dq = p + (Im γ + μ)q
//! dp = −∇V(q) + (Im γ − μ)p
//! ```
//!
//! The hot loop runs on flat row-major buffers laid out as
//! `[q (n) | p (n) | G (2n×2n) | A]`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::aux_matrices::build_aux_matrices;
use crate::linalg;
use crate::params::DissipationParams;
use crate::potential::{Potential, PotentialError};

/// Default smallest eigenvalue tolerated in G.
pub const DEFAULT_PD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("G lost positive definiteness at t = {t} (pivot {pivot:e}); reduce dt or check parameters")]
    PositiveDefinitenessLost { t: f64, pivot: f64 },
    #[error("potential failure at t = {t}: {source}")]
    Potential {
        t: f64,
        #[source]
        source: PotentialError,
    },
    #[error("|Hessian| = {norm} exceeds the configured bound {bound} at t = {t}")]
    HessianBoundExceeded { t: f64, norm: f64, bound: f64 },
    #[error("non-finite packet state at t = {t}")]
    NonFinite { t: f64 },
    #[error("packet dimension {got} does not match {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("target time {t_final} precedes the current time {t}")]
    TimeReversal { t: f64, t_final: f64 },
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
}

impl DynamicsError {
    /// Time at which the failure happened, when known.
    pub fn time(&self) -> Option<f64> {
        match self {
            DynamicsError::PositiveDefinitenessLost { t, .. }
            | DynamicsError::Potential { t, .. }
            | DynamicsError::HessianBoundExceeded { t, .. }
            | DynamicsError::NonFinite { t }
            | DynamicsError::TimeReversal { t, .. } => Some(*t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Wavepacket {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    /// Inverse covariance, 2n×2n SPD.
    pub g: DMatrix<f64>,
    pub a: f64,
    pub t: f64,
}

impl Wavepacket {
    pub fn new(q: DVector<f64>, p: DVector<f64>, g: DMatrix<f64>, a: f64, t: f64) -> Self {
        Self { q, p, g, a, t }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Phase-space center `(q, p)`.
    pub fn center(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_iterator(2 * n, self.q.iter().chain(self.p.iter()).copied())
    }

    /// `Σ = G⁻¹`.
    pub fn sigma(&self) -> Option<DMatrix<f64>> {
        self.g.clone().cholesky().map(|c| c.inverse())
    }

    /// Phase-space integral `A (2πε)ⁿ √det Σ`.
    pub fn mass(&self, epsilon: f64) -> f64 {
        let n = self.dim() as i32;
        self.a * (2.0 * std::f64::consts::PI * epsilon).powi(n) / self.g.determinant().sqrt()
    }

    /// Length of the flat `(q, p, G, A)` state.
    pub fn state_len(n: usize) -> usize {
        2 * n + 4 * n * n + 1
    }

    pub fn write_flat(&self, y: &mut [f64]) {
        let n = self.dim();
        let d = 2 * n;
        y[..n].copy_from_slice(self.q.as_slice());
        y[n..d].copy_from_slice(self.p.as_slice());
        for i in 0..d {
            for j in 0..d {
                y[d + i * d + j] = self.g[(i, j)];
            }
        }
        y[d + d * d] = self.a;
    }

    pub fn from_flat(y: &[f64], n: usize, t: f64) -> Self {
        let d = 2 * n;
        Self {
            q: DVector::from_column_slice(&y[..n]),
            p: DVector::from_column_slice(&y[n..d]),
            g: DMatrix::from_row_slice(d, d, &y[d..d + d * d]),
            a: y[d + d * d],
            t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketDerivative {
    pub dq: DVector<f64>,
    pub dp: DVector<f64>,
    pub dg: DMatrix<f64>,
    pub da: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    /// Steps between positive-definiteness checks of G.
    pub pd_check_interval: usize,
    pub pd_tolerance: f64,
    /// Optional bound on `max |∂²V|` along trajectories.
    pub hessian_bound: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            pd_check_interval: 1,
            pd_tolerance: DEFAULT_PD_TOLERANCE,
            hessian_bound: None,
        }
    }
}

impl IntegratorConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DynamicsError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.pd_check_interval == 0 {
            return Err(DynamicsError::InvalidConfig("pd_check_interval must be >= 1".into()));
        }
        if !(self.pd_tolerance >= 0.0) {
            return Err(DynamicsError::InvalidConfig("pd_tolerance must be >= 0".into()));
        }
        if let Some(b) = self.hessian_bound {
            if !(b > 0.0) {
                return Err(DynamicsError::InvalidConfig("hessian_bound must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Environment coefficients flattened for the inner loop.
#[derive(Debug, Clone)]
struct Drift {
    n: usize,
    /// `Im γ + μ`
    pos: Vec<f64>,
    /// `Im γ − μ`
    mom: Vec<f64>,
    /// `diag(Γ₂ + M̃) = (−pos, −mom)`
    kdiag: Vec<f64>,
    /// `B − Γ₁`, row-major.
    diffusion: Vec<f64>,
    has_diffusion: bool,
    /// `Tr Γ₂`
    tr_gamma2: f64,
}

impl Drift {
    fn closed(n: usize) -> Self {
        let d = 2 * n;
        Self {
            n,
            pos: vec![0.0; n],
            mom: vec![0.0; n],
            kdiag: vec![0.0; d],
            diffusion: vec![0.0; d * d],
            has_diffusion: false,
            tr_gamma2: 0.0,
        }
    }

    fn open(params: &DissipationParams) -> Self {
        let n = params.dim();
        let d = 2 * n;
        let mut drift = Self::closed(n);
        for k in 0..n {
            drift.pos[k] = params.position_drift(k);
            drift.mom[k] = params.momentum_drift(k);
            drift.kdiag[k] = -drift.pos[k];
            drift.kdiag[n + k] = -drift.mom[k];
            let re = params.gamma()[k].re;
            drift.diffusion[k * d + k] = params.beta()[k];
            drift.diffusion[(n + k) * d + n + k] = params.alpha()[k];
            drift.diffusion[k * d + n + k] = -re;
            drift.diffusion[(n + k) * d + k] = -re;
            drift.tr_gamma2 -= 2.0 * params.gamma()[k].im;
        }
        drift.has_diffusion = drift.diffusion.iter().any(|&v| v != 0.0);
        drift
    }
}

/// Per-evaluation scratch for the right-hand side.
#[derive(Debug, Clone)]
struct Scratch {
    grad: Vec<f64>,
    hess: Vec<f64>,
    kmat: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        let d = 2 * n;
        Self {
            grad: vec![0.0; n],
            hess: vec![0.0; n * n],
            kmat: vec![0.0; d * d],
            x: vec![0.0; d * d],
            y: vec![0.0; d * d],
            z: vec![0.0; d * d],
        }
    }

    fn rhs(
        &mut self,
        pot: &Potential,
        drift: &Drift,
        hessian_bound: Option<f64>,
        t: f64,
        s: &[f64],
        out: &mut [f64],
    ) -> Result<(), DynamicsError> {
        rhs_kernel(
            pot,
            drift,
            s,
            out,
            &mut self.grad,
            &mut self.hess,
            &mut self.kmat,
            &mut self.x,
            &mut self.y,
            &mut self.z,
        )
        .map_err(|source| DynamicsError::Potential { t, source })?;
        if let Some(bound) = hessian_bound {
            let norm = self.hess.iter().fold(0.0_f64, |m, h| m.max(h.abs()));
            if norm > bound {
                return Err(DynamicsError::HessianBoundExceeded { t, norm, bound });
            }
        }
        Ok(())
    }
}

/// Reusable RK4 stepper: owns all scratch so steps never allocate.
pub struct Stepper<'a> {
    pot: &'a Potential,
    drift: Drift,
    cfg: IntegratorConfig,
    scratch: Scratch,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
    pd: Vec<f64>,
    steps: usize,
}

impl<'a> Stepper<'a> {
    pub fn open(
        pot: &'a Potential,
        params: &DissipationParams,
        cfg: &IntegratorConfig,
    ) -> Result<Self, DynamicsError> {
        if pot.dim() != params.dim() {
            return Err(DynamicsError::DimensionMismatch {
                expected: params.dim(),
                got: pot.dim(),
            });
        }
        cfg.validate()?;
        Ok(Self::with_drift(pot, Drift::open(params), cfg.clone()))
    }

    pub fn closed(pot: &'a Potential, cfg: &IntegratorConfig) -> Result<Self, DynamicsError> {
        cfg.validate()?;
        Ok(Self::with_drift(pot, Drift::closed(pot.dim()), cfg.clone()))
    }

    fn with_drift(pot: &'a Potential, drift: Drift, cfg: IntegratorConfig) -> Self {
        let n = drift.n;
        let d = 2 * n;
        let len = Wavepacket::state_len(n);
        Self {
            pot,
            drift,
            cfg,
            scratch: Scratch::new(n),
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            stage: vec![0.0; len],
            pd: vec![0.0; d * d],
            steps: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.drift.n
    }

    /// One classical RK4 step of size `h` on the flat state `s`, at time `t`.
    pub fn step(&mut self, s: &mut [f64], t: f64, h: f64) -> Result<(), DynamicsError> {
        let d = 2 * self.drift.n;
        let gs = d..d + d * d;
        let Self {
            pot,
            drift,
            cfg,
            scratch,
            k1,
            k2,
            k3,
            k4,
            stage,
            ..
        } = self;
        let bound = cfg.hessian_bound;
        let half = 0.5 * h;

        scratch.rhs(pot, drift, bound, t, s, k1)?;
        for ((st, &y), &k) in stage.iter_mut().zip(s.iter()).zip(k1.iter()) {
            *st = y + half * k;
        }
        linalg::symmetrize(&mut stage[gs.clone()], d);
        scratch.rhs(pot, drift, bound, t + half, stage, k2)?;
        for ((st, &y), &k) in stage.iter_mut().zip(s.iter()).zip(k2.iter()) {
            *st = y + half * k;
        }
        linalg::symmetrize(&mut stage[gs.clone()], d);
        scratch.rhs(pot, drift, bound, t + half, stage, k3)?;
        for ((st, &y), &k) in stage.iter_mut().zip(s.iter()).zip(k3.iter()) {
            *st = y + h * k;
        }
        linalg::symmetrize(&mut stage[gs.clone()], d);
        scratch.rhs(pot, drift, bound, t + h, stage, k4)?;
        let h6 = h / 6.0;
        for i in 0..s.len() {
            s[i] += h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        linalg::symmetrize(&mut s[gs.clone()], d);

        let t_end = t + h;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { t: t_end });
        }
        self.steps += 1;
        if self.steps % self.cfg.pd_check_interval == 0 {
            self.pd.copy_from_slice(&s[gs]);
            for i in 0..d {
                self.pd[i * d + i] -= self.cfg.pd_tolerance;
            }
            if let Err(pivot) = linalg::cholesky_in_place(&mut self.pd, d) {
                return Err(DynamicsError::PositiveDefinitenessLost { t: t_end, pivot });
            }
        }
        Ok(())
    }

    /// Integrates the flat state from `t0` through each target time in order,
    /// calling `on_target(index, state)` on arrival. Steps have size `dt`
    /// except the last one of each segment, which lands exactly on the target.
    pub fn integrate<F>(
        &mut self,
        s: &mut [f64],
        t0: f64,
        targets: &[f64],
        mut on_target: F,
    ) -> Result<(), DynamicsError>
    where
        F: FnMut(usize, &[f64]),
    {
        let dt = self.cfg.dt;
        let mut t_seg = t0;
        for (idx, &t_target) in targets.iter().enumerate() {
            if t_target < t_seg {
                return Err(DynamicsError::TimeReversal {
                    t: t_seg,
                    t_final: t_target,
                });
            }
            let tol = 1e-12 * t_target.abs().max(1.0);
            let mut k = 0u64;
            loop {
                let t = t_seg + k as f64 * dt;
                let rem = t_target - t;
                if rem <= tol {
                    break;
                }
                let h = if rem <= dt * (1.0 + 1e-9) { rem } else { dt };
                self.step(s, t, h)?;
                k += 1;
            }
            on_target(idx, s);
            t_seg = t_target;
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn rhs_kernel(
    pot: &Potential,
    drift: &Drift,
    s: &[f64],
    out: &mut [f64],
    grad: &mut [f64],
    hess: &mut [f64],
    kmat: &mut [f64],
    x: &mut [f64],
    y: &mut [f64],
    z: &mut [f64],
) -> Result<(), PotentialError> {
    let n = drift.n;
    let d = 2 * n;
    let (q, rest) = s.split_at(n);
    let (p, rest) = rest.split_at(n);
    let (g, rest) = rest.split_at(d * d);
    let a = rest[0];

    pot.derivatives_into(q, grad, hess)?;

    if n == 1 {
        rhs_kernel_1d(drift, q[0], p[0], g, a, grad[0], hess[0], out);
        return Ok(());
    }

    for k in 0..n {
        out[k] = p[k] + drift.pos[k] * q[k];
        out[n + k] = -grad[k] + drift.mom[k] * p[k];
    }

    // K = diag(Γ₂ + M̃) − C
    kmat.fill(0.0);
    for i in 0..d {
        kmat[i * d + i] = drift.kdiag[i];
    }
    for k in 0..n {
        kmat[k * d + n + k] -= 1.0;
        for j in 0..n {
            kmat[(n + k) * d + j] += hess[k * n + j];
        }
    }

    // x = G K
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for l in 0..d {
                acc += g[i * d + l] * kmat[l * d + j];
            }
            x[i * d + j] = acc;
        }
    }

    let dg = &mut out[d..d + d * d];
    if drift.has_diffusion {
        // z = G (B−Γ₁) G
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += g[i * d + l] * drift.diffusion[l * d + j];
                }
                y[i * d + j] = acc;
            }
        }
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += y[i * d + l] * g[l * d + j];
                }
                z[i * d + j] = acc;
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = x[i * d + j] + x[j * d + i] - 0.5 * (z[i * d + j] + z[j * d + i]);
                dg[i * d + j] = v;
                dg[j * d + i] = v;
            }
        }
    } else {
        for i in 0..d {
            for j in 0..=i {
                let v = x[i * d + j] + x[j * d + i];
                dg[i * d + j] = v;
                dg[j * d + i] = v;
            }
        }
    }

    let mut tr = 0.0;
    if drift.has_diffusion {
        for i in 0..d {
            for j in 0..d {
                tr += drift.diffusion[i * d + j] * g[j * d + i];
            }
        }
    }
    out[d + d * d] = (drift.tr_gamma2 - 0.5 * tr) * a;
    Ok(())
}

/// Scalar specialization of [`rhs_kernel`] for n = 1, same arithmetic.
#[allow(clippy::too_many_arguments)]
#[inline]
fn rhs_kernel_1d(drift: &Drift, q: f64, p: f64, g: &[f64], a: f64, grad: f64, h: f64, out: &mut [f64]) {
    out[0] = p + drift.pos[0] * q;
    out[1] = -grad + drift.mom[0] * p;
    let (k0, k1) = (drift.kdiag[0], drift.kdiag[1]);
    let (g00, g01, g10, g11) = (g[0], g[1], g[2], g[3]);
    let x00 = g00 * k0 + g01 * h;
    let x01 = g00 * -1.0 + g01 * k1;
    let x10 = g10 * k0 + g11 * h;
    let x11 = g10 * -1.0 + g11 * k1;
    if drift.has_diffusion {
        let (b, r, al) = (drift.diffusion[0], drift.diffusion[1], drift.diffusion[3]);
        let y00 = g00 * b + g01 * r;
        let y01 = g00 * r + g01 * al;
        let y10 = g10 * b + g11 * r;
        let y11 = g10 * r + g11 * al;
        let z00 = y00 * g00 + y01 * g10;
        let z01 = y00 * g01 + y01 * g11;
        let z10 = y10 * g00 + y11 * g10;
        let z11 = y10 * g01 + y11 * g11;
        out[2] = x00 + x00 - 0.5 * (z00 + z00);
        let off = x10 + x01 - 0.5 * (z10 + z01);
        out[3] = off;
        out[4] = off;
        out[5] = x11 + x11 - 0.5 * (z11 + z11);
        let tr = b * g00 + r * g10 + r * g01 + al * g11;
        out[6] = (drift.tr_gamma2 - 0.5 * tr) * a;
    } else {
        out[2] = x00 + x00;
        let off = x10 + x01;
        out[3] = off;
        out[4] = off;
        out[5] = x11 + x11;
        out[6] = (drift.tr_gamma2 - 0.5 * 0.0) * a;
    }
}

fn derivative_from_flat(dy: &[f64], n: usize) -> PacketDerivative {
    let d = 2 * n;
    PacketDerivative {
        dq: DVector::from_column_slice(&dy[..n]),
        dp: DVector::from_column_slice(&dy[n..d]),
        dg: DMatrix::from_row_slice(d, d, &dy[d..d + d * d]),
        da: dy[d + d * d],
    }
}

fn check_dims(wp: &Wavepacket, n: usize) -> Result<(), DynamicsError> {
    let d = 2 * n;
    if wp.q.len() != n || wp.p.len() != n || wp.g.nrows() != d || wp.g.ncols() != d {
        return Err(DynamicsError::DimensionMismatch {
            expected: n,
            got: wp.q.len(),
        });
    }
    Ok(())
}

fn rhs_with(wp: &Wavepacket, pot: &Potential, drift: Drift) -> Result<PacketDerivative, DynamicsError> {
    let n = drift.n;
    check_dims(wp, n)?;
    let d = 2 * n;
    let len = Wavepacket::state_len(n);
    let mut s = vec![0.0; len];
    wp.write_flat(&mut s);
    let mut out = vec![0.0; len];
    rhs_kernel(
        pot,
        &drift,
        &s,
        &mut out,
        &mut vec![0.0; n],
        &mut vec![0.0; n * n],
        &mut vec![0.0; d * d],
        &mut vec![0.0; d * d],
        &mut vec![0.0; d * d],
        &mut vec![0.0; d * d],
    )
    .map_err(|source| DynamicsError::Potential { t: wp.t, source })?;
    Ok(derivative_from_flat(&out, n))
}

/// Open-system derivative of all packet parameters.
pub fn rhs_open(
    wp: &Wavepacket,
    pot: &Potential,
    params: &DissipationParams,
) -> Result<PacketDerivative, DynamicsError> {
    if pot.dim() != params.dim() {
        return Err(DynamicsError::DimensionMismatch {
            expected: params.dim(),
            got: pot.dim(),
        });
    }
    rhs_with(wp, pot, Drift::open(params))
}

/// Closed-system derivative: Hamiltonian centers, Lyapunov G, constant A.
pub fn rhs_closed(wp: &Wavepacket, pot: &Potential) -> Result<PacketDerivative, DynamicsError> {
    rhs_with(wp, pot, Drift::closed(pot.dim()))
}

/// `dΣ = FΣ + ΣFᵀ + (B − Γ₁)` with `F = C − Γ₂ − M̃`, evaluated at center `q`.
pub fn rhs_sigma(
    sigma: &DMatrix<f64>,
    pot: &Potential,
    params: &DissipationParams,
    q: &DVector<f64>,
) -> Result<DMatrix<f64>, DynamicsError> {
    let n = params.dim();
    if sigma.nrows() != 2 * n || sigma.ncols() != 2 * n || q.len() != n || pot.dim() != n {
        return Err(DynamicsError::DimensionMismatch {
            expected: n,
            got: q.len(),
        });
    }
    let sample = crate::potential::potential_eval(pot, q.as_slice())
        .map_err(|source| DynamicsError::Potential { t: f64::NAN, source })?;
    let aux = build_aux_matrices(params, &sample.hess).map_err(|e| DynamicsError::DimensionMismatch {
        expected: e.n,
        got: e.rows,
    })?;
    let f = aux.covariance_drift();
    let mut ds = &f * sigma + sigma * f.transpose() + aux.diffusion();
    let sym = 0.5 * (&ds + ds.transpose());
    ds.copy_from(&sym);
    Ok(ds)
}

/// One RK4 step of size `dt` with the default positive-definiteness check.
pub fn rk4_step(
    wp: &Wavepacket,
    pot: &Potential,
    params: &DissipationParams,
    dt: f64,
) -> Result<Wavepacket, DynamicsError> {
    let cfg = IntegratorConfig::with_dt(dt);
    let mut stepper = Stepper::open(pot, params, &cfg)?;
    check_dims(wp, stepper.dim())?;
    let mut s = vec![0.0; Wavepacket::state_len(wp.dim())];
    wp.write_flat(&mut s);
    stepper.step(&mut s, wp.t, dt)?;
    Ok(Wavepacket::from_flat(&s, wp.dim(), wp.t + dt))
}

/// Final state plus the states at the requested checkpoint times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub final_state: Wavepacket,
    pub checkpoints: Vec<Wavepacket>,
}

/// Integrates to `t_final`, landing exactly on it.
pub fn evolve(
    wp: &Wavepacket,
    pot: &Potential,
    params: &DissipationParams,
    cfg: &IntegratorConfig,
    t_final: f64,
) -> Result<Wavepacket, DynamicsError> {
    Ok(evolve_with_checkpoints(wp, pot, params, cfg, t_final, &[])?.final_state)
}

/// Like [`evolve`], also recording the state at each time in `checkpoints`
/// (sorted, within `[wp.t, t_final]`).
pub fn evolve_with_checkpoints(
    wp: &Wavepacket,
    pot: &Potential,
    params: &DissipationParams,
    cfg: &IntegratorConfig,
    t_final: f64,
    checkpoints: &[f64],
) -> Result<Trajectory, DynamicsError> {
    let mut stepper = Stepper::open(pot, params, cfg)?;
    evolve_on(&mut stepper, wp, t_final, checkpoints)
}

pub(crate) fn evolve_on(
    stepper: &mut Stepper<'_>,
    wp: &Wavepacket,
    t_final: f64,
    checkpoints: &[f64],
) -> Result<Trajectory, DynamicsError> {
    let n = stepper.dim();
    check_dims(wp, n)?;
    if t_final < wp.t {
        return Err(DynamicsError::TimeReversal { t: wp.t, t_final });
    }
    if let Some(&bad) = checkpoints
        .iter()
        .find(|&&c| c < wp.t || c > t_final)
        .or_else(|| checkpoints.windows(2).find(|w| w[1] < w[0]).map(|w| &w[1]))
    {
        return Err(DynamicsError::InvalidConfig(format!(
            "checkpoint {bad} is out of order or outside [{}, {t_final}]",
            wp.t
        )));
    }
    let mut targets = checkpoints.to_vec();
    targets.push(t_final);
    let mut s = vec![0.0; Wavepacket::state_len(n)];
    wp.write_flat(&mut s);
    let mut saved = Vec::with_capacity(checkpoints.len());
    let last = checkpoints.len();
    stepper.integrate(&mut s, wp.t, &targets, |idx, state| {
        if idx < last {
            saved.push(Wavepacket::from_flat(state, n, targets[idx]));
        }
    })?;
    Ok(Trajectory {
        final_state: Wavepacket::from_flat(&s, n, t_final),
        checkpoints: saved,
    })
}
