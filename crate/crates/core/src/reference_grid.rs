//! One-dimensional (2D phase space) grid solver for the Wigner–Fokker–Planck
//! equation on a periodic box.
//!
//! One step is the Strang composition
//! `F(dt/2) T(dt/2) P(dt) T(dt/2) F(dt/2)` of exact spectral transport `T`,
//! exact spectral potential `P` and an explicit Heun finite-difference
//! Fokker–Planck substep `F`. Consecutive `F(dt/2)` halves between
//! checkpoints are fused into one `F(dt)`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use thiserror::Error;

use crate::gaussian::GaussianState;
use crate::parallel::with_workers;
use crate::params::DissipationParams;
use crate::potential::Potential;
use crate::sampling::{GridAxis, GridSpec, WignerField};

/// Largest tolerated imaginary residue after a spectral substep, relative to
/// the field's max norm.
pub const IMAGINARY_RESIDUE_TOLERANCE: f64 = 1e-10;
/// Explicit Fokker–Planck stability budget.
pub const STABILITY_LIMIT: f64 = 0.5;
/// Width, in cells, of the band used by the boundary-mass metric.
pub const BOUNDARY_BAND: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid axis {axis} has {points} points; a power of two (>= 4) is required")]
    NotPowerOfTwo { axis: usize, points: usize },
    #[error("the grid solver is one-dimensional; got n = {0}")]
    Dimension(usize),
    #[error("dt = {dt} violates the explicit Fokker-Planck bound dt <= {bound}")]
    Unstable { dt: f64, bound: f64 },
    #[error("spectral substep left an imaginary residue {residue:e} (relative); domain too small or under-resolved")]
    ImaginaryResidue { residue: f64 },
    #[error("non-finite grid values at t = {0}")]
    NonFinite(f64),
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),
}

/// Periodic axis `[min, max)` with `points` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicAxis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl PeriodicAxis {
    pub fn new(min: f64, max: f64, points: usize) -> Self {
        Self { min, max, points }
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / self.points as f64
    }

    pub fn period(&self) -> f64 {
        self.max - self.min
    }

    pub fn coords(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.points).map(|i| self.min + i as f64 * h).collect()
    }

    pub fn grid_axis(&self) -> GridAxis {
        GridAxis::periodic(self.min, self.max, self.points)
    }

    /// Angular wavenumber of FFT bin `m`; the Nyquist bin maps to `−π/h`.
    fn wavenumber(&self, m: usize) -> f64 {
        let n = self.points;
        let signed = if m < n / 2 { m as f64 } else { m as f64 - n as f64 };
        2.0 * PI * signed / self.period()
    }

    pub fn validate(&self, axis: usize) -> Result<(), GridError> {
        if self.points < 4 || !self.points.is_power_of_two() {
            return Err(GridError::NotPowerOfTwo {
                axis,
                points: self.points,
            });
        }
        if !(self.max > self.min) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(GridError::InvalidConfig(format!(
                "axis {axis} bounds [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSolverConfig {
    pub x: PeriodicAxis,
    pub xi: PeriodicAxis,
    pub dt: f64,
    pub t_final: f64,
    /// Sorted times in `[0, t_final]` at which to record the field.
    pub checkpoints: Vec<f64>,
    pub workers: usize,
}

impl GridSolverConfig {
    /// Square box `[lo, hi)²` with `points` cells per axis.
    pub fn square(lo: f64, hi: f64, points: usize, dt: f64, t_final: f64) -> Self {
        Self {
            x: PeriodicAxis::new(lo, hi, points),
            xi: PeriodicAxis::new(lo, hi, points),
            dt,
            t_final,
            checkpoints: Vec::new(),
            workers: 1,
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::new(vec![self.x.grid_axis(), self.xi.grid_axis()])
    }
}

/// Largest dt accepted by the explicit Fokker–Planck substep:
/// `dt·(ε·max(α, β, |Re γ|)/h² + u/h + |c|) ≤ 0.5` with the drift speed `u`
/// and divergence `c` of the linear drift.
pub fn stability_bound(x: &PeriodicAxis, xi: &PeriodicAxis, params: &DissipationParams) -> f64 {
    let eps = params.epsilon();
    let (a, b, g) = (params.alpha()[0], params.beta()[0], params.gamma()[0]);
    let (ax, axi) = (params.position_drift(0), params.momentum_drift(0));
    let h = x.step().min(xi.step());
    let xmax = x.min.abs().max(x.max.abs());
    let ximax = xi.min.abs().max(xi.max.abs());
    let diffusion = eps * a.max(b).max(g.re.abs()) / (h * h);
    let advection = (ax.abs() * xmax / x.step()).max(axi.abs() * ximax / xi.step());
    let rate = diffusion + advection + ax.abs() + axi.abs();
    if rate == 0.0 {
        f64::INFINITY
    } else {
        STABILITY_LIMIT / rate
    }
}

fn field_grid_check(field: &WignerField) -> Result<(PeriodicAxis, PeriodicAxis), GridError> {
    if field.grid.axes.len() != 2 {
        return Err(GridError::Dimension(field.grid.axes.len() / 2));
    }
    let to_periodic = |a: &GridAxis| PeriodicAxis::new(a.min, a.min + a.points as f64 * a.step(), a.points);
    let x = to_periodic(&field.grid.axes[0]);
    let xi = to_periodic(&field.grid.axes[1]);
    x.validate(0)?;
    xi.validate(1)?;
    Ok((x, xi))
}

/// Samples the Gaussian density on the periodic grid.
pub fn initial_field(init: &GaussianState, x: &PeriodicAxis, xi: &PeriodicAxis) -> Result<WignerField, GridError> {
    if init.dim() != 1 {
        return Err(GridError::Dimension(init.dim()));
    }
    let grid = GridSpec::new(vec![x.grid_axis(), xi.grid_axis()]);
    let s = init.cov();
    let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
    let (i00, i01, i11) = (s[(1, 1)] / det, -s[(0, 1)] / det, s[(0, 0)] / det);
    let (mx, mxi) = (init.mean()[0], init.mean()[1]);
    let norm = 1.0 / (2.0 * PI * det.sqrt());
    let xs = x.coords();
    let xis = xi.coords();
    let mut field = WignerField::zeros(grid, 0.0);
    for (i, &xv) in xs.iter().enumerate() {
        for (j, &xiv) in xis.iter().enumerate() {
            let (u, v) = (xv - mx, xiv - mxi);
            let t = i00 * u * u + 2.0 * i01 * u * v + i11 * v * v;
            field.values[i * xis.len() + j] = norm * (-0.5 * t).exp();
        }
    }
    Ok(field)
}

/// Real-to-complex plan pair for one axis length.
struct RealPlan {
    n: usize,
    fwd: Arc<dyn RealToComplex<f64>>,
    inv: Arc<dyn ComplexToReal<f64>>,
}

struct SpectralBuffers {
    spectrum: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl RealPlan {
    fn new(planner: &mut RealFftPlanner<f64>, n: usize) -> Self {
        Self { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    fn buffers(&self) -> SpectralBuffers {
        let len = self.fwd.get_scratch_len().max(self.inv.get_scratch_len());
        SpectralBuffers { spectrum: self.fwd.make_output_vec(), scratch: vec![Complex64::new(0.0, 0.0); len] }
    }

    /// FFT, multiply by the half-spectrum `mult`, inverse FFT (normalized).
    /// Returns the imaginary residue on the self-conjugate bins, scaled to
    /// physical space.
    fn multiply(&self, row: &mut [f64], mult: &[Complex64], buf: &mut SpectralBuffers) -> f64 {
        let SpectralBuffers { spectrum, scratch } = buf;
        self.fwd.process_with_scratch(row, spectrum, scratch).expect("row length matches plan");
        for (b, m) in spectrum.iter_mut().zip(mult) {
            *b *= m;
        }
        let last = spectrum.len() - 1;
        let residue = spectrum[0].im.abs().max(spectrum[last].im.abs());
        spectrum[0].im = 0.0;
        spectrum[last].im = 0.0;
        self.inv.process_with_scratch(spectrum, row, scratch).expect("spectrum length matches plan");
        let scale = 1.0 / self.n as f64;
        for v in row.iter_mut() {
            *v *= scale;
        }
        residue * scale
    }

    /// Applies `mult[r]` to every contiguous row `r` of `data`.
    fn multiply_rows(&self, data: &mut [f64], mult: &[Complex64]) -> f64 {
        let half = self.n / 2 + 1;
        data.par_chunks_mut(self.n)
            .zip(mult.par_chunks(half))
            .map_init(|| self.buffers(), |buf, (row, m)| self.multiply(row, m, buf))
            .reduce(|| 0.0, f64::max)
    }
}

/// Cache-blocked transpose of a `rows × cols` row-major matrix.
fn transpose(src: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
    const BLOCK: usize = 32;
    for ib in (0..rows).step_by(BLOCK) {
        let ie = (ib + BLOCK).min(rows);
        for jb in (0..cols).step_by(BLOCK) {
            let je = (jb + BLOCK).min(cols);
            for i in ib..ie {
                let row = &src[i * cols..(i + 1) * cols];
                for j in jb..je {
                    dst[j * rows + i] = row[j];
                }
            }
        }
    }
}

/// Spectral multiply along `x` (the strided axis) with `[iξ][kx]` table.
fn transport_columns(values: &mut [f64], nx: usize, nxi: usize, plan: &RealPlan, table: &[Complex64]) -> f64 {
    let mut cols = vec![0.0; nx * nxi];
    transpose(values, &mut cols, nx, nxi);
    let residue = plan.multiply_rows(&mut cols, table);
    transpose(&cols, values, nxi, nx);
    residue
}

/// Cached FFT plans and multiplier tables for one configuration.
pub struct GridSolver {
    x: PeriodicAxis,
    xi: PeriodicAxis,
    dt: f64,
    plan_x: RealPlan,
    plan_xi: RealPlan,
    /// `[iξ][kx]` half-spectrum multipliers for a half transport step.
    transport_half: Vec<Complex64>,
    /// `[ix][kξ]` half-spectrum multipliers for a full potential step.
    potential_full: Vec<Complex64>,
    fp: FokkerPlanck,
    workers: usize,
}

#[derive(Debug, Clone)]
struct FokkerPlanck {
    active: bool,
    /// `(ε/2)α`, `(ε/2)β`, `−ε Re γ`
    d_xixi: f64,
    d_xx: f64,
    d_xxi: f64,
    a_x: f64,
    a_xi: f64,
    xs: Vec<f64>,
    xis: Vec<f64>,
    hx: f64,
    hxi: f64,
}

impl GridSolver {
    pub fn new(
        x: PeriodicAxis,
        xi: PeriodicAxis,
        dt: f64,
        pot: &Potential,
        params: &DissipationParams,
        workers: usize,
    ) -> Result<Self, GridError> {
        if params.dim() != 1 || pot.dim() != 1 {
            return Err(GridError::Dimension(params.dim().max(pot.dim())));
        }
        x.validate(0)?;
        xi.validate(1)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(GridError::InvalidConfig(format!("dt = {dt}")));
        }
        let bound = stability_bound(&x, &xi, params);
        if dt > bound {
            return Err(GridError::Unstable { dt, bound });
        }
        let mut planner = RealFftPlanner::new();
        let eps = params.epsilon();
        let xs = x.coords();
        let xis = xi.coords();
        let (nx, nxi) = (x.points, xi.points);
        let half = nxi / 2 + 1;

        let transport_half = transport_table(&x, &xis, 0.5 * dt);
        let mut potential_full = vec![Complex64::new(0.0, 0.0); nx * half];
        for (i, &xv) in xs.iter().enumerate() {
            for m in 0..half {
                let y = -0.5 * eps * xi.wavenumber(m);
                let phase = -(dt / eps) * (pot.value(&[xv + y]) - pot.value(&[xv - y]));
                potential_full[i * half + m] = if m == nxi / 2 {
                    Complex64::new(phase.cos(), 0.0)
                } else {
                    Complex64::from_polar(1.0, phase)
                };
            }
        }
        if potential_full.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(GridError::InvalidConfig("potential is not finite on the grid".into()));
        }

        let g = params.gamma()[0];
        let fp = FokkerPlanck {
            active: !params.is_closed(),
            d_xixi: 0.5 * eps * params.alpha()[0],
            d_xx: 0.5 * eps * params.beta()[0],
            d_xxi: -eps * g.re,
            a_x: params.position_drift(0),
            a_xi: params.momentum_drift(0),
            xs,
            xis,
            hx: x.step(),
            hxi: xi.step(),
        };
        Ok(Self {
            x,
            xi,
            dt,
            plan_x: RealPlan::new(&mut planner, nx),
            plan_xi: RealPlan::new(&mut planner, nxi),
            transport_half,
            potential_full,
            fp,
            workers: workers.max(1),
        })
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::new(vec![self.x.grid_axis(), self.xi.grid_axis()])
    }

    fn check_field(&self, field: &WignerField) -> Result<(), GridError> {
        if field.grid != self.grid_spec() {
            return Err(GridError::InvalidConfig("field grid does not match the solver".into()));
        }
        Ok(())
    }

    /// Exact free transport by `dt/2`.
    pub fn half_transport(&self, field: &mut WignerField) -> Result<(), GridError> {
        self.check_field(field)?;
        let (nx, nxi) = (self.x.points, self.xi.points);
        let residue = with_workers(self.workers, || {
            transport_columns(&mut field.values, nx, nxi, &self.plan_x, &self.transport_half)
        });
        check_residue(residue, field)
    }

    /// Exact potential substep over `dt`.
    pub fn potential(&self, field: &mut WignerField) -> Result<(), GridError> {
        self.check_field(field)?;
        let residue = with_workers(self.workers, || self.plan_xi.multiply_rows(&mut field.values, &self.potential_full));
        check_residue(residue, field)
    }

    /// Heun step of the Fokker–Planck operator over `h`.
    pub fn fokker_planck(&self, field: &mut WignerField, h: f64) -> Result<(), GridError> {
        self.check_field(field)?;
        if !self.fp.active {
            return Ok(());
        }
        let (nx, nxi) = (self.x.points, self.xi.points);
        let mut k1 = vec![0.0; nx * nxi];
        let mut k2 = vec![0.0; nx * nxi];
        with_workers(self.workers, || {
            self.fp.apply(&field.values, &mut k1, nx, nxi);
            let w1: Vec<f64> = field.values.iter().zip(&k1).map(|(w, k)| w + h * k).collect();
            self.fp.apply(&w1, &mut k2, nx, nxi);
        });
        for ((v, a), b) in field.values.iter_mut().zip(&k1).zip(&k2) {
            *v += 0.5 * h * (a + b);
        }
        Ok(())
    }

    /// Advances `field` by `steps` full Strang steps. The Fokker–Planck
    /// halves between consecutive steps are fused.
    pub fn advance(&self, field: &mut WignerField, steps: usize) -> Result<(), GridError> {
        if steps == 0 {
            return Ok(());
        }
        self.fokker_planck(field, 0.5 * self.dt)?;
        for s in 0..steps {
            self.half_transport(field)?;
            self.potential(field)?;
            self.half_transport(field)?;
            let h = if s + 1 == steps { 0.5 * self.dt } else { self.dt };
            self.fokker_planck(field, h)?;
            field.time += self.dt;
            if field.values.iter().any(|v| !v.is_finite()) {
                return Err(GridError::NonFinite(field.time));
            }
        }
        Ok(())
    }
}

impl FokkerPlanck {
    /// Conservative centered differences of the Fokker–Planck operator.
    fn apply(&self, w: &[f64], out: &mut [f64], nx: usize, nxi: usize) {
        let (hx, hxi) = (self.hx, self.hxi);
        let cxx = self.d_xx / (hx * hx);
        let cxixi = self.d_xixi / (hxi * hxi);
        let cxxi = self.d_xxi / (4.0 * hx * hxi);
        let cax = self.a_x / (2.0 * hx);
        let caxi = self.a_xi / (2.0 * hxi);
        let xis = &self.xis;
        out.par_chunks_mut(nxi).enumerate().for_each(|(i, row)| {
            let ip = (i + 1) % nx;
            let im = (i + nx - 1) % nx;
            let (r, rp, rm) = (&w[i * nxi..(i + 1) * nxi], &w[ip * nxi..(ip + 1) * nxi], &w[im * nxi..(im + 1) * nxi]);
            let (xp, xm) = (self.xs[ip], self.xs[im]);
            let cell = |j: usize, jp: usize, jm: usize| {
                let wxx = rp[j] - 2.0 * r[j] + rm[j];
                let wxixi = r[jp] - 2.0 * r[j] + r[jm];
                let wxxi = rp[jp] - rp[jm] - rm[jp] + rm[jm];
                let flux_x = xp * rp[j] - xm * rm[j];
                let flux_xi = xis[jp] * r[jp] - xis[jm] * r[jm];
                cxixi * wxixi + cxx * wxx + cxxi * wxxi - cax * flux_x - caxi * flux_xi
            };
            row[0] = cell(0, 1, nxi - 1);
            for j in 1..nxi - 1 {
                row[j] = cell(j, j + 1, j - 1);
            }
            row[nxi - 1] = cell(nxi - 1, 0, nxi - 2);
        });
    }
}

/// `[iξ][kx]` half-spectrum multipliers for transport over `h`.
fn transport_table(x: &PeriodicAxis, xis: &[f64], h: f64) -> Vec<Complex64> {
    let nx = x.points;
    let half = nx / 2 + 1;
    let mut table = vec![Complex64::new(0.0, 0.0); half * xis.len()];
    for (j, &xiv) in xis.iter().enumerate() {
        for m in 0..half {
            let phase = -x.wavenumber(m) * xiv * h;
            table[j * half + m] = if m == nx / 2 {
                Complex64::new(phase.cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, phase)
            };
        }
    }
    table
}

fn check_residue(residue: f64, field: &WignerField) -> Result<(), GridError> {
    let norm = field.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let rel = if norm > 0.0 { residue / norm } else { residue };
    if rel > IMAGINARY_RESIDUE_TOLERANCE {
        return Err(GridError::ImaginaryResidue { residue: rel });
    }
    Ok(())
}

/// Exact advection `W(x − ξ dt, ξ)`.
pub fn step_transport(field: &WignerField, dt: f64) -> Result<WignerField, GridError> {
    let (x, xi) = field_grid_check(field)?;
    let table = transport_table(&x, &xi.coords(), dt);
    let plan = RealPlan::new(&mut RealFftPlanner::new(), x.points);
    let mut out = field.clone();
    let residue = with_workers(1, || transport_columns(&mut out.values, x.points, xi.points, &plan, &table));
    check_residue(residue, &out)?;
    Ok(out)
}

/// Exact potential substep over `dt` in the mixed `(x, y)` representation.
pub fn step_potential(field: &WignerField, pot: &Potential, epsilon: f64, dt: f64) -> Result<WignerField, GridError> {
    let (x, xi) = field_grid_check(field)?;
    let params = DissipationParams::closed(1, epsilon)
        .map_err(|e| GridError::InvalidConfig(e.to_string()))?;
    let solver = GridSolver::new(x, xi, dt, pot, &params, 1)?;
    let mut out = field.clone();
    out.grid = solver.grid_spec();
    solver.potential(&mut out)?;
    out.grid = field.grid.clone();
    Ok(out)
}

/// One Heun step of the Fokker–Planck operator over `dt`.
pub fn step_fokker_planck(field: &WignerField, params: &DissipationParams, dt: f64) -> Result<WignerField, GridError> {
    let (x, xi) = field_grid_check(field)?;
    let solver = GridSolver::new(x, xi, dt, &Potential::harmonic_1d(0.0, 0.0, 0.0), params, 1)?;
    let mut out = field.clone();
    out.grid = solver.grid_spec();
    solver.fokker_planck(&mut out, dt)?;
    out.grid = field.grid.clone();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub final_field: WignerField,
    pub checkpoints: Vec<WignerField>,
}

/// Full solve from a Gaussian initial state.
pub fn solve_grid(
    init: &GaussianState,
    pot: &Potential,
    params: &DissipationParams,
    cfg: &GridSolverConfig,
) -> Result<GridSolution, GridError> {
    if !(cfg.t_final >= 0.0) {
        return Err(GridError::InvalidConfig(format!("t_final = {}", cfg.t_final)));
    }
    if cfg.checkpoints.iter().any(|&c| c < 0.0 || c > cfg.t_final) || cfg.checkpoints.windows(2).any(|w| w[1] < w[0]) {
        return Err(GridError::InvalidConfig("checkpoints must be sorted within [0, t_final]".into()));
    }
    let solver = GridSolver::new(cfg.x, cfg.xi, cfg.dt, pot, params, cfg.workers)?;
    let mut field = initial_field(init, &cfg.x, &cfg.xi)?;
    let mut checkpoints = Vec::with_capacity(cfg.checkpoints.len());
    let mut done = 0usize;
    let mut targets = cfg.checkpoints.clone();
    targets.push(cfg.t_final);
    for (k, &target) in targets.iter().enumerate() {
        let total = (target / cfg.dt).round() as usize;
        if ((total as f64) * cfg.dt - target).abs() > 1e-9 * target.max(1.0) {
            return Err(GridError::InvalidConfig(format!(
                "time {target} is not a multiple of dt = {}",
                cfg.dt
            )));
        }
        solver.advance(&mut field, total - done)?;
        done = total;
        field.time = target;
        if k < cfg.checkpoints.len() {
            checkpoints.push(field.clone());
        }
    }
    Ok(GridSolution {
        final_field: field,
        checkpoints,
    })
}

/// Trapezoid (periodic: plain Riemann) quadrature of `f(x, ξ) W`.
pub fn grid_expectation<F: Fn(f64, f64) -> f64>(field: &WignerField, f: F) -> f64 {
    let (xa, xia) = (&field.grid.axes[0], &field.grid.axes[1]);
    let xs = xa.coords();
    let xis = xia.coords();
    let mut total = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        for (j, &xi) in xis.iter().enumerate() {
            total += f(x, xi) * field.values[i * xis.len() + j];
        }
    }
    total * xa.step() * xia.step()
}

/// Total mass `Σ W ΔxΔξ`.
pub fn grid_mass(field: &WignerField) -> f64 {
    grid_expectation(field, |_, _| 1.0)
}

/// Fraction of `Σ|W|` within [`BOUNDARY_BAND`] cells of the box edge.
pub fn boundary_mass_fraction(field: &WignerField) -> f64 {
    let (nx, nxi) = (field.grid.axes[0].points, field.grid.axes[1].points);
    let band = BOUNDARY_BAND;
    let mut edge = 0.0;
    let mut total = 0.0;
    for i in 0..nx {
        for j in 0..nxi {
            let v = field.values[i * nxi + j].abs();
            total += v;
            if i < band || j < band || i >= nx - band || j >= nxi - band {
                edge += v;
            }
        }
    }
    if total > 0.0 {
        edge / total
    } else {
        0.0
    }
}
