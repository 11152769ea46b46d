//! Frozen Gaussian sampling for the semiclassical Wigner–Fokker–Planck
//! equation, with semi-analytic and grid reference solvers.

pub mod aux_matrices;
pub mod dynamics;
pub mod gaussian;
pub mod linalg;
pub mod params;
pub mod potential;
pub mod parallel;
pub mod sampling;
pub mod stats;
pub mod reference_gaussian;
pub mod reference_grid;
pub mod harness;
