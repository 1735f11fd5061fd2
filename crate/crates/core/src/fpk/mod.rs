//! Conservative finite-volume solver for the forward equation of a hybrid
//! model: densities in each mode, reset sources on the image surfaces and
//! terminal masses.

mod density;
mod grid;
mod solver;

use thiserror::Error;

use crate::model::{HybridModel, ModelError};

pub use density::DensityState;
pub use grid::{build_grid, Axis, BoundaryFace, BoundaryRoute, GridLayout, HFace, ModeGrid};
pub use solver::{CurrentField, FluxScheme, FpkSolver, Transfer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpkError {
    #[error("density grids support dimension 1 or 2, got {0}")]
    UnsupportedDimension(usize),
    #[error("mode {mode} is not an axis-aligned box")]
    UnsupportedDomain { mode: usize },
    #[error("reset edge {edge}: {detail}")]
    MisalignedH { edge: usize, detail: String },
    #[error("face {face} of mode {mode}: {detail}")]
    MisalignedPatch {
        mode: usize,
        face: usize,
        detail: String,
    },
    #[error("face {face} of mode {mode} is characteristic; the solver needs absorbing faces")]
    CharacteristicFacePresent { mode: usize, face: usize },
    #[error("dt = {dt} exceeds the stability bound {bound}")]
    StabilityViolation { dt: f64, bound: f64 },
    #[error("density {value} in cell {cell} of mode {mode} is below tolerance")]
    NegativeDensity { mode: usize, cell: usize, value: f64 },
    #[error("outflux {value} through face {face} of mode {mode} is negative")]
    NegativeOutflux { mode: usize, face: usize, value: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Ghost-padded density arrays with `p = 0` on every boundary face.
pub fn apply_absorbing_bc(
    model: &HybridModel,
    grid: &GridLayout,
    density: &DensityState,
) -> Result<Vec<Vec<f64>>, FpkError> {
    FpkSolver::new(model, grid.clone(), FluxScheme::default())?.apply_absorbing_bc(density)
}

pub fn probability_current(
    model: &HybridModel,
    grid: &GridLayout,
    density: &DensityState,
) -> Result<CurrentField, FpkError> {
    FpkSolver::new(model, grid.clone(), FluxScheme::default())?.probability_current(density)
}

pub fn adjoint_apply(
    model: &HybridModel,
    grid: &GridLayout,
    density: &DensityState,
) -> Result<Vec<Vec<f64>>, FpkError> {
    FpkSolver::new(model, grid.clone(), FluxScheme::default())?.adjoint_apply(density)
}

pub fn transfer_flux(
    model: &HybridModel,
    grid: &GridLayout,
    current: &CurrentField,
) -> Result<Transfer, FpkError> {
    FpkSolver::new(model, grid.clone(), FluxScheme::default())?.transfer_flux(current)
}

/// Returns the state after `n_steps` explicit steps of length `dt`.
pub fn evolve(
    model: &HybridModel,
    grid: &GridLayout,
    density: &DensityState,
    dt: f64,
    n_steps: usize,
) -> Result<DensityState, FpkError> {
    let mut solver = FpkSolver::new(model, grid.clone(), FluxScheme::default())?;
    let mut out = density.clone();
    solver.evolve(&mut out, dt, n_steps)?;
    Ok(out)
}
