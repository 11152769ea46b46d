use rayon::prelude::*;

use super::{PacketEnsemble, SamplingError};
use crate::linalg;
use crate::parallel::with_workers;

/// Packets contribute nothing where `T/(2ε)` exceeds this exponent.
pub const DEFAULT_CUTOFF_EXPONENT: f64 = 70.0;

/// Uniform axis `min + i·(max − min)/(points − 1)`, `i = 0..points`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, points: usize) -> Self {
        Self { min, max, points }
    }

    /// Periodic axis of `points` cells on `[min, max)`; the stored `max` is
    /// the last node, `min + (points − 1)h`.
    pub fn periodic(min: f64, max: f64, points: usize) -> Self {
        let h = (max - min) / points as f64;
        Self {
            min,
            max: min + (points - 1) as f64 * h,
            points,
        }
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.coord(i)).collect()
    }
}

/// Phase-space box, axes ordered `(x₁..xₙ, ξ₁..ξₙ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Self {
        Self { axes }
    }

    /// Square 1D phase-space box `[lo, hi]²` with `points` nodes per axis.
    pub fn square(lo: f64, hi: f64, points: usize) -> Self {
        Self::new(vec![GridAxis::new(lo, hi, points); 2])
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.axes.is_empty() || self.axes.len() % 2 != 0 {
            return Err(SamplingError::Grid(format!(
                "need 2n axes, got {}",
                self.axes.len()
            )));
        }
        for (k, a) in self.axes.iter().enumerate() {
            if a.points < 2 || !(a.max > a.min) || !a.min.is_finite() || !a.max.is_finite() {
                return Err(SamplingError::Grid(format!(
                    "axis {k}: [{}, {}] with {} points",
                    a.min, a.max, a.points
                )));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Product of axis spacings.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(GridAxis::step).product()
    }
}

/// Wigner function sampled on a grid, row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub time: f64,
}

impl WignerField {
    pub fn zeros(grid: GridSpec, time: f64) -> Self {
        let len = grid.len();
        Self {
            grid,
            values: vec![0.0; len],
            time,
        }
    }

    /// Value at a 1D phase-space node `(ix, iξ)`.
    pub fn at(&self, ix: usize, ixi: usize) -> f64 {
        self.values[ix * self.grid.axes[1].points + ixi]
    }

    /// Trapezoid-rule integral over the box.
    pub fn integral(&self) -> f64 {
        let shape = self.grid.shape();
        let mut total = 0.0;
        let mut idx = vec![0usize; shape.len()];
        for &v in &self.values {
            let w: f64 = idx
                .iter()
                .zip(&shape)
                .map(|(&i, &n)| if i == 0 || i == n - 1 { 0.5 } else { 1.0 })
                .product();
            total += w * v;
            advance(&mut idx, &shape);
        }
        total * self.grid.cell_volume()
    }

    /// `√(Σ W² ΔV)`, the discrete L² norm.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// `‖self − other‖ / ‖other‖` on identical grids.
    pub fn relative_l2_difference(&self, other: &WignerField) -> Option<f64> {
        if self.grid != other.grid {
            return None;
        }
        let diff: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let norm: f64 = other.values.iter().map(|b| b * b).sum();
        Some((diff / norm).sqrt())
    }
}

fn advance(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

struct PacketView {
    center: Vec<f64>,
    g: Vec<f64>,
    a: f64,
    lo: Vec<usize>,
    hi: Vec<usize>,
}

/// `W = (1/M) Σ_j A_j exp(−T_j/(2ε))` with the default cutoff.
pub fn reconstruct(ens: &PacketEnsemble, grid: &GridSpec) -> Result<WignerField, SamplingError> {
    reconstruct_with(ens, grid, Some(DEFAULT_CUTOFF_EXPONENT))
}

/// Reconstruction with an optional cutoff exponent; `None` sums every packet
/// at every node.
pub fn reconstruct_with(
    ens: &PacketEnsemble,
    grid: &GridSpec,
    cutoff_exponent: Option<f64>,
) -> Result<WignerField, SamplingError> {
    grid.validate()?;
    let d = grid.axes.len();
    if d != 2 * ens.dim() {
        return Err(SamplingError::Grid(format!(
            "grid has {d} axes for a {}-dimensional ensemble",
            ens.dim()
        )));
    }
    if ens.is_empty() {
        return Err(SamplingError::InvalidConfig("empty ensemble".into()));
    }
    let eps = ens.epsilon();
    let r2 = cutoff_exponent.map(|c| 2.0 * eps * c);
    let shape = grid.shape();

    let views: Vec<PacketView> = ens
        .packets
        .iter()
        .map(|wp| {
            let center: Vec<f64> = wp.center().iter().copied().collect();
            let mut g = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    g[i * d + j] = wp.g[(i, j)];
                }
            }
            let (lo, hi) = match r2 {
                Some(r2) => {
                    let (sigma, _) = linalg::spd_inverse_det(&g, d).ok_or_else(|| {
                        SamplingError::InvalidConfig("packet G is not positive definite".into())
                    })?;
                    let mut lo = vec![0; d];
                    let mut hi = vec![0; d];
                    for k in 0..d {
                        let ax = &grid.axes[k];
                        let w = (r2 * sigma[k * d + k]).sqrt();
                        let h = ax.step();
                        let a = ((center[k] - w - ax.min) / h).ceil();
                        let b = ((center[k] + w - ax.min) / h).floor();
                        let last = (ax.points - 1) as f64;
                        if b < a || b < 0.0 || a > last {
                            (lo[k], hi[k]) = (1, 0);
                        } else {
                            (lo[k], hi[k]) = (a.max(0.0) as usize, b.min(last) as usize);
                        }
                    }
                    (lo, hi)
                }
                None => (vec![0; d], shape.iter().map(|&n| n - 1).collect()),
            };
            Ok(PacketView {
                center,
                g,
                a: wp.a,
                lo,
                hi,
            })
        })
        .collect::<Result<_, SamplingError>>()?;

    let slab: usize = shape[1..].iter().product();
    let m = ens.len() as f64;
    let mut field = WignerField::zeros(grid.clone(), ens.time());
    let coords: Vec<Vec<f64>> = grid.axes.iter().map(GridAxis::coords).collect();
    let inv2eps = 1.0 / (2.0 * eps);

    with_workers(ens.provenance.sampling.workers, || {
        field
            .values
            .par_chunks_mut(slab)
            .enumerate()
            .for_each(|(i0, out)| {
                let mut z = vec![0.0; d];
                let mut idx = vec![0usize; d - 1];
                for v in &views {
                    if i0 < v.lo[0] || i0 > v.hi[0] || (1..d).any(|k| v.lo[k] > v.hi[k]) {
                        continue;
                    }
                    z[0] = coords[0][i0] - v.center[0];
                    for k in 1..d {
                        idx[k - 1] = v.lo[k];
                    }
                    'points: loop {
                        let mut flat = 0;
                        for k in 1..d {
                            z[k] = coords[k][idx[k - 1]] - v.center[k];
                            flat = flat * shape[k] + idx[k - 1];
                        }
                        let t = linalg::quad_form(&v.g, &z, d);
                        if r2.is_none_or(|r2| t <= r2) {
                            out[flat] += v.a * (-t * inv2eps).exp();
                        }
                        // Odometer over the packet's box in the trailing axes.
                        let mut k = d - 1;
                        loop {
                            if k == 0 {
                                break 'points;
                            }
                            if idx[k - 1] < v.hi[k] {
                                idx[k - 1] += 1;
                                break;
                            }
                            idx[k - 1] = v.lo[k];
                            k -= 1;
                        }
                    }
                }
                for w in out.iter_mut() {
                    *w /= m;
                }
            });
    });
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::super::{make_ensemble, SamplingConfig};
    use super::*;
    use crate::dynamics::Wavepacket;
    use crate::gaussian::GaussianState;
    use crate::params::DissipationParams;
    use nalgebra::{DMatrix, DVector};

    fn ensemble(m: usize, seed: u64) -> PacketEnsemble {
        let init = GaussianState::new_1d(0.3, -0.2, [[0.2, 0.05], [0.05, 0.3]]).unwrap();
        let params = DissipationParams::closed(1, 1.0 / 16.0).unwrap();
        make_ensemble(&init, &params, &SamplingConfig::new(m, seed)).unwrap()
    }

    #[test]
    fn value_at_packet_center_is_amplitude() {
        let mut ens = ensemble(1, 1);
        ens.packets[0] = Wavepacket::new(
            DVector::from_element(1, 0.5),
            DVector::from_element(1, -0.25),
            DMatrix::from_row_slice(2, 2, &[3.0, 0.4, 0.4, 2.0]),
            1.7,
            0.0,
        );
        let grid = GridSpec::square(-1.0, 1.0, 9);
        let field = reconstruct(&ens, &grid).unwrap();
        assert_eq!(field.at(6, 3), 1.7);
    }

    #[test]
    fn reconstruction_integrates_to_one() {
        let ens = ensemble(400, 2);
        // Sampled population std ≤ √0.3 ≈ 0.55; 8 std either side.
        let grid = GridSpec::new(vec![GridAxis::new(-4.2, 4.8, 361), GridAxis::new(-4.6, 4.2, 353)]);
        let field = reconstruct(&ens, &grid).unwrap();
        assert!((field.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn duplicated_packets_give_same_field() {
        let one = ensemble(1, 3);
        let mut two = one.clone();
        two.packets.push(two.packets[0].clone());
        let grid = GridSpec::square(-2.0, 2.0, 41);
        assert_eq!(reconstruct(&one, &grid).unwrap(), reconstruct(&two, &grid).unwrap());
    }

    #[test]
    fn cutoff_is_exact() {
        let ens = ensemble(50, 4);
        let grid = GridSpec::square(-3.0, 3.0, 61);
        let cut = reconstruct(&ens, &grid).unwrap();
        let full = reconstruct_with(&ens, &grid, None).unwrap();
        for (a, b) in cut.values.iter().zip(&full.values) {
            assert!((a - b).abs() < 1e-25);
        }
    }

    #[test]
    fn independent_of_workers() {
        let mut ens = ensemble(300, 5);
        let grid = GridSpec::square(-2.0, 2.0, 64);
        let serial = reconstruct(&ens, &grid).unwrap();
        ens.provenance.sampling.workers = 4;
        assert_eq!(serial, reconstruct(&ens, &grid).unwrap());
    }

    #[test]
    fn degenerate_grid_rejected() {
        let ens = ensemble(2, 6);
        assert!(reconstruct(&ens, &GridSpec::square(0.0, 1.0, 1)).is_err());
        assert!(reconstruct(&ens, &GridSpec::square(1.0, 1.0, 5)).is_err());
        assert!(reconstruct(&ens, &GridSpec::new(vec![GridAxis::new(0.0, 1.0, 4)])).is_err());
    }

    #[test]
    fn periodic_axis_layout() {
        let ax = GridAxis::periodic(-4.0, 4.0, 8);
        assert_eq!(ax.step(), 1.0);
        assert_eq!(ax.coord(7), 3.0);
    }
}
