//! Cross-checks between the path simulator, the density solver and
//! closed-form identities.

mod function;
mod report;

use serde::Serialize;
use thiserror::Error;

use crate::fpk::{BoundaryRoute, CurrentField, DensityState, FluxScheme, FpkError, FpkSolver, GridLayout};
use crate::model::{HybridModel, InitialLaw};
use crate::simulate::{ensemble_with_functional, EmpiricalMeasure, SimConfig, SimError};

pub use function::{BoundTestFunction, TestFunction};
pub use report::{Comparison, Metric, ValidationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("the ensemble did not record path integrals")]
    MissingPathIntegrals,
    #[error("no snapshot at time {0}")]
    UnknownTime(f64),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Fpk(#[from] FpkError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Monte-Carlo estimate of the Dynkin residual at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DynkinEstimate {
    pub time: f64,
    /// `Ê[φ(X_t) − φ(X_0) − ∫Lφ ds − Σ(φ∘Φ − φ)]`.
    pub residual: f64,
    pub standard_error: f64,
    pub paths: usize,
    /// Largest `|Σ(φ∘Φ − φ)|` over paths, surface resets only.
    pub max_surface_jump_sum: f64,
}

/// Dynkin residual at `t` from the per-path terms recorded in `measure`.
///
/// The initial term uses each path's own `φ(X_0)`, so the standard error
/// only reflects the martingale part of the identity.
pub fn dynkin_residual(measure: &EmpiricalMeasure, t: f64) -> Result<DynkinEstimate, ValidationError> {
    let pi = measure
        .path_integrals
        .as_ref()
        .ok_or(ValidationError::MissingPathIntegrals)?;
    let k = measure
        .snapshots
        .iter()
        .position(|s| s.time == t)
        .ok_or(ValidationError::UnknownTime(t))?;
    let n = pi.initial.len();
    if n == 0 {
        return Ok(DynkinEstimate {
            time: t,
            residual: 0.0,
            standard_error: 0.0,
            paths: 0,
            max_surface_jump_sum: 0.0,
        });
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut max_surface = 0.0f64;
    for i in 0..n {
        let d = pi.value[k][i] - pi.initial[i] - pi.generator_integral[k][i] - pi.jump_sum[k][i];
        // Welford
        let delta = d - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (d - mean);
        max_surface = max_surface.max(pi.surface_jump_sum[k][i].abs());
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    Ok(DynkinEstimate {
        time: t,
        residual: mean,
        standard_error: (var / n as f64).sqrt(),
        paths: n,
        max_surface_jump_sum: max_surface,
    })
}

/// Runs an ensemble recording the Dynkin terms of `phi` and evaluates the
/// residual at every time in `times`.
#[allow(clippy::too_many_arguments)]
pub fn dynkin_check(
    model: &HybridModel,
    law: &InitialLaw,
    phi: &TestFunction,
    n: usize,
    cfg: &SimConfig,
    times: &[f64],
    seed: u64,
) -> Result<Vec<DynkinEstimate>, ValidationError> {
    let bound = phi.bind(model);
    let measure = ensemble_with_functional(model, law, n, cfg, times, seed, &bound)?;
    measure
        .times()
        .into_iter()
        .map(|t| dynkin_residual(&measure, t))
        .collect()
}

/// `Σ p·vol + Σ q`, summed in a fixed order.
pub fn mass_balance(grid: &GridLayout, density: &DensityState) -> f64 {
    density.total_mass(grid)
}

/// Normal components of a vector field on every face, with one-sided values
/// across `H`-faces.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FaceField {
    /// `faces[mode][axis][face]`, along `+e_axis`. On an `H`-face this is the
    /// side-1 (low) value `A⁽¹⁾`.
    pub faces: Vec<Vec<Vec<f64>>>,
    /// `⟨A⁽²⁾ − A⁽¹⁾, ν₁₂⟩` per entry of `grid.h_faces`.
    pub h_jump: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: &GridLayout) -> Self {
        Self {
            faces: grid
                .modes
                .iter()
                .map(|g| (0..g.dim()).map(|k| vec![0.0; g.n_faces(k)]).collect())
                .collect(),
            h_jump: vec![0.0; grid.h_faces.len()],
        }
    }

    /// Samples `⟨A(mode, x), e_axis⟩` at face centres; no jumps.
    pub fn sample(grid: &GridLayout, a: impl Fn(usize, &[f64]) -> Vec<f64>) -> Self {
        let mut out = Self::zeros(grid);
        for (q, g) in grid.modes.iter().enumerate() {
            for axis in 0..g.dim() {
                for f in 0..g.n_faces(axis) {
                    out.faces[q][axis][f] = a(q, &g.face_center(axis, f))[axis];
                }
            }
        }
        out
    }

    /// The current the solver actually uses cell by cell. Across an `H`-face
    /// the low cell sees the exchanged flux minus half the injection and the
    /// high cell the flux plus half, so the jump is the injected mass per
    /// unit area.
    pub fn from_solver_current(grid: &GridLayout, current: &CurrentField) -> Self {
        let mut out = Self {
            faces: current.faces.clone(),
            h_jump: vec![0.0; grid.h_faces.len()],
        };
        for (h, hf) in grid.h_faces.iter().enumerate() {
            let src = &grid.boundary[hf.source];
            let injected = current.boundary_outflux[hf.source] * src.area / hf.area;
            out.faces[hf.mode][hf.axis][hf.face] -= 0.5 * injected;
            out.h_jump[h] = injected;
        }
        out
    }

    /// Per-cell divergence from the face values, using the side value of
    /// `H`-faces that belongs to each cell.
    pub fn divergence(&self, grid: &GridLayout) -> Vec<Vec<f64>> {
        let mut jump_at: Vec<Vec<Vec<Option<f64>>>> = grid
            .modes
            .iter()
            .map(|g| (0..g.dim()).map(|k| vec![None; g.n_faces(k)]).collect())
            .collect();
        for (h, hf) in grid.h_faces.iter().enumerate() {
            jump_at[hf.mode][hf.axis][hf.face] = Some(self.h_jump[h]);
        }
        let mut out = Vec::with_capacity(grid.modes.len());
        for (q, g) in grid.modes.iter().enumerate() {
            let mut div = vec![0.0; g.n_cells()];
            for axis in 0..g.dim() {
                let inv = 1.0 / g.axes[axis].dx;
                for (f, &v) in self.faces[q][axis].iter().enumerate() {
                    let (lo, hi) = g.face_cells(axis, f);
                    if let Some(c) = lo {
                        div[c] += v * inv;
                    }
                    if let Some(c) = hi {
                        div[c] -= (v + jump_at[q][axis][f].unwrap_or(0.0)) * inv;
                    }
                }
            }
            out.push(div);
        }
        out
    }
}

/// Terms of the discrete Stokes identity
/// `∫_{M∖H} div A dm = ∫_{∂M} ⟨A,ν⟩ dσ − ∫_H ⟨A⁽²⁾ − A⁽¹⁾, ν₁₂⟩ dσ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StokesTerms {
    pub volume: f64,
    pub boundary: f64,
    pub h_jump: f64,
    /// `|volume − boundary + h_jump|`, or without the `H` term when it is
    /// omitted.
    pub residual: f64,
}

/// Discrete Stokes check for `field`. The volume term uses
/// `cell_divergence` (per-cell mean divergence) when given, otherwise the
/// face differences of `field`. Set `include_h` to `false` to drop the jump
/// term.
pub fn discrete_stokes_check(
    grid: &GridLayout,
    field: &FaceField,
    cell_divergence: Option<&[Vec<f64>]>,
    include_h: bool,
) -> Result<StokesTerms, ValidationError> {
    let shape_ok = field.faces.len() == grid.modes.len()
        && field.h_jump.len() == grid.h_faces.len()
        && field
            .faces
            .iter()
            .zip(&grid.modes)
            .all(|(f, g)| f.len() == g.dim() && (0..g.dim()).all(|k| f[k].len() == g.n_faces(k)));
    if !shape_ok {
        return Err(ValidationError::GridMismatch("face field does not match the grid".into()));
    }
    let own;
    let div = match cell_divergence {
        Some(d) => {
            if d.len() != grid.modes.len() || d.iter().zip(&grid.modes).any(|(v, g)| v.len() != g.n_cells()) {
                return Err(ValidationError::GridMismatch("divergence does not match the grid".into()));
            }
            d
        }
        None => {
            own = field.divergence(grid);
            &own[..]
        }
    };
    let mut volume = 0.0;
    for (q, g) in grid.modes.iter().enumerate() {
        for v in &div[q] {
            volume += v * g.cell_volume;
        }
    }
    let mut boundary = 0.0;
    for bf in &grid.boundary {
        let v = field.faces[bf.mode][bf.axis][bf.face];
        boundary += if bf.upper { v } else { -v } * bf.area;
    }
    let mut h_jump = 0.0;
    for (h, hf) in grid.h_faces.iter().enumerate() {
        h_jump += field.h_jump[h] * hf.area;
    }
    let residual = if include_h {
        (volume - boundary + h_jump).abs()
    } else {
        (volume - boundary).abs()
    };
    Ok(StokesTerms {
        volume,
        boundary,
        h_jump,
        residual,
    })
}

/// Distance between an ensemble snapshot and a density on the same grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McPdeDistance {
    /// `Σ |p̂ − p|·vol` over all cells of all modes.
    pub l1: f64,
    /// `|q̂ − q|` per terminal state.
    pub terminal: Vec<f64>,
    pub max_terminal: f64,
    pub paths: usize,
}

/// Histogram of the snapshot at `t` on the density grid: `counts / (N·vol)`.
pub fn histogram(
    grid: &GridLayout,
    measure: &EmpiricalMeasure,
    t: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), ValidationError> {
    let snap = measure.snapshot_at(t).ok_or(ValidationError::UnknownTime(t))?;
    if snap.modes.len() != grid.modes.len() || measure.dim != grid.dim() {
        return Err(ValidationError::GridMismatch("ensemble and grid have different modes".into()));
    }
    let n = measure.effective_size();
    let mut p: Vec<Vec<f64>> = grid.modes.iter().map(|g| vec![0.0; g.n_cells()]).collect();
    if n == 0 {
        return Ok((p, vec![0.0; snap.terminal_counts.len()]));
    }
    for (q, (cloud, g)) in snap.modes.iter().zip(&grid.modes).enumerate() {
        let w = 1.0 / (n as f64 * g.cell_volume);
        for x in cloud.points(measure.dim) {
            let c = g.locate(x).ok_or_else(|| {
                ValidationError::GridMismatch(format!("sample {x:?} of mode {q} lies outside the grid"))
            })?;
            p[q][c] += w;
        }
    }
    let q_hat = snap.terminal_counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok((p, q_hat))
}

/// L1 distance between the ensemble histogram at `t` and `density`, plus the
/// terminal-mass differences. The density's own time is not checked, so a
/// stationary profile can be compared with a late snapshot.
pub fn compare_mc_pde(
    grid: &GridLayout,
    measure: &EmpiricalMeasure,
    density: &DensityState,
    t: f64,
) -> Result<McPdeDistance, ValidationError> {
    let matches = density.modes.len() == grid.modes.len()
        && density.modes.iter().zip(&grid.modes).all(|(p, g)| p.len() == g.n_cells());
    if !matches {
        return Err(ValidationError::GridMismatch("density does not match the grid".into()));
    }
    let (p_hat, q_hat) = histogram(grid, measure, t)?;
    if q_hat.len() != density.terminal.len() {
        return Err(ValidationError::GridMismatch("terminal states differ".into()));
    }
    let mut l1 = 0.0;
    for ((ph, p), g) in p_hat.iter().zip(&density.modes).zip(&grid.modes) {
        for (a, b) in ph.iter().zip(p) {
            l1 += (a - b).abs() * g.cell_volume;
        }
    }
    let terminal: Vec<f64> = q_hat.iter().zip(&density.terminal).map(|(a, b)| (a - b).abs()).collect();
    let max_terminal = terminal.iter().cloned().fold(0.0, f64::max);
    Ok(McPdeDistance {
        l1,
        terminal,
        max_terminal,
        paths: measure.effective_size(),
    })
}

/// Per-`H`-face terms of the flux-continuity condition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FluxContinuity {
    /// `J^out` on the paired source face.
    pub outflux: Vec<f64>,
    /// `⟨J⁽²⁾ − J⁽¹⁾, ν₁₂⟩` from one-sided stencils.
    pub inflow_jump: Vec<f64>,
    /// `|J^out − h·(J⁽²⁾ − J⁽¹⁾)|`.
    pub residual: Vec<f64>,
    pub max_residual: f64,
}

/// Flux-continuity residual `max_H |J^out − h·J^in∘Φ|` of `density`, with
/// the one-sided currents computed on each side of every `H`-face.
pub fn flux_continuity_residual(
    model: &HybridModel,
    grid: &GridLayout,
    density: &DensityState,
) -> Result<FluxContinuity, ValidationError> {
    let mut solver = FpkSolver::new(model, grid.clone(), FluxScheme::default())?;
    let current = solver.probability_current(density)?;
    let mut out = FluxContinuity {
        outflux: Vec::with_capacity(grid.h_faces.len()),
        inflow_jump: Vec::with_capacity(grid.h_faces.len()),
        residual: Vec::with_capacity(grid.h_faces.len()),
        max_residual: 0.0,
    };
    for (h, hf) in grid.h_faces.iter().enumerate() {
        let src = &grid.boundary[hf.source];
        debug_assert!(matches!(src.route, BoundaryRoute::Surface { .. }));
        let j_out = current.boundary_outflux[hf.source];
        let [j1, j2] = current.h_one_sided[h];
        let jac = model.jacobian_factor(hf.edge, &[]).map_err(FpkError::from)?;
        let r = (j_out - jac * (j2 - j1)).abs();
        out.outflux.push(j_out);
        out.inflow_jump.push(j2 - j1);
        out.residual.push(r);
        out.max_residual = out.max_residual.max(r);
    }
    Ok(out)
}
