//! Cell-averaged densities and terminal masses.

use serde::{Deserialize, Serialize};

use super::grid::{GridLayout, ModeGrid};
use super::FpkError;
use crate::model::{HybridModel, InitialLaw};

/// Discretized law at time `time`: per-mode cell averages (mass / volume)
/// and per-terminal masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityState {
    pub time: f64,
    pub modes: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
}

// 3-point Gauss–Legendre on [-1, 1].
const GL_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

impl DensityState {
    pub fn zeros(grid: &GridLayout, n_terminal: usize) -> Self {
        Self {
            time: 0.0,
            modes: grid.modes.iter().map(|g| vec![0.0; g.n_cells()]).collect(),
            terminal: vec![0.0; n_terminal],
        }
    }

    /// `Σ p·vol + Σ q`, summed mode by mode, cell by cell, then terminals.
    pub fn total_mass(&self, grid: &GridLayout) -> f64 {
        let mut total = 0.0;
        for (p, g) in self.modes.iter().zip(&grid.modes) {
            total += mode_mass(p, g);
        }
        for q in &self.terminal {
            total += q;
        }
        total
    }

    pub fn mode_mass(&self, grid: &GridLayout, mode: usize) -> f64 {
        mode_mass(&self.modes[mode], &grid.modes[mode])
    }

    /// Cell averages of `f(mode, θ)` by tensor Gauss–Legendre quadrature,
    /// rescaled to total mass 1.
    pub fn from_function(
        grid: &GridLayout,
        n_terminal: usize,
        f: impl Fn(usize, &[f64]) -> f64,
    ) -> Result<Self, FpkError> {
        let mut state = Self::zeros(grid, n_terminal);
        for (q, g) in grid.modes.iter().enumerate() {
            for c in 0..g.n_cells() {
                state.modes[q][c] = cell_average(g, c, |x| f(q, x));
            }
        }
        let mass = state.total_mass(grid);
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(FpkError::InvalidArgument(
                "initial density has no positive mass on the grid".into(),
            ));
        }
        for p in state.modes.iter_mut().flatten() {
            *p /= mass;
        }
        Ok(state)
    }

    /// Discretizes an initial law. A point mass goes to the cell containing
    /// it, split evenly between neighbours when it sits on a cell face.
    pub fn from_law(model: &HybridModel, grid: &GridLayout, law: &InitialLaw) -> Result<Self, FpkError> {
        let n_terminal = model.terminal_states().len();
        match law {
            InitialLaw::Terminal { terminal } => {
                if *terminal >= n_terminal {
                    return Err(FpkError::InvalidArgument(format!("unknown terminal {terminal}")));
                }
                let mut s = Self::zeros(grid, n_terminal);
                s.terminal[*terminal] = 1.0;
                Ok(s)
            }
            InitialLaw::Point { mode, position } => {
                let g = grid
                    .modes
                    .get(*mode)
                    .ok_or_else(|| FpkError::InvalidArgument(format!("unknown mode {mode}")))?;
                if position.len() != g.dim() {
                    return Err(FpkError::InvalidArgument("initial position has wrong dimension".into()));
                }
                let mut per_axis: Vec<Vec<usize>> = Vec::with_capacity(g.dim());
                for (k, a) in g.axes.iter().enumerate() {
                    let s = (position[k] - a.lo) / a.dx;
                    if !(s > 0.0 && s < a.cells as f64) {
                        return Err(FpkError::InvalidArgument(format!(
                            "initial point {position:?} is not inside mode {mode}"
                        )));
                    }
                    let r = s.round();
                    if (s - r).abs() <= 1e-9 {
                        per_axis.push(vec![r as usize - 1, r as usize]);
                    } else {
                        per_axis.push(vec![s.floor() as usize]);
                    }
                }
                let mut s = Self::zeros(grid, n_terminal);
                let cells: Vec<usize> = if g.dim() == 1 {
                    per_axis[0].clone()
                } else {
                    per_axis[1]
                        .iter()
                        .flat_map(|&j| per_axis[0].iter().map(move |&i| i + g.nx() * j))
                        .collect()
                };
                let share = 1.0 / (cells.len() as f64 * g.cell_volume);
                for c in cells {
                    s.modes[*mode][c] = share;
                }
                Ok(s)
            }
            InitialLaw::Gaussian { mode, mean, std } => {
                if *mode >= grid.modes.len() || mean.len() != grid.dim() || !(*std > 0.0) {
                    return Err(FpkError::InvalidArgument("invalid Gaussian initial law".into()));
                }
                let inv = 1.0 / (2.0 * std * std);
                Self::from_function(grid, n_terminal, |q, x| {
                    if q != *mode {
                        return 0.0;
                    }
                    let r2: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-r2 * inv).exp()
                })
            }
        }
    }
}

fn mode_mass(p: &[f64], g: &ModeGrid) -> f64 {
    let mut s = 0.0;
    for v in p {
        s += v * g.cell_volume;
    }
    s
}

pub(crate) fn cell_average(g: &ModeGrid, c: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let center = g.cell_center(c);
    let d = g.dim();
    let mut x = center.clone();
    let mut acc = 0.0;
    let n = GL_NODES.len().pow(d as u32);
    for idx in 0..n {
        let mut w = 1.0;
        let mut rem = idx;
        for k in 0..d {
            let m = rem % GL_NODES.len();
            rem /= GL_NODES.len();
            x[k] = center[k] + 0.5 * g.axes[k].dx * GL_NODES[m];
            w *= 0.5 * GL_WEIGHTS[m];
        }
        acc += w * f(&x);
    }
    acc
}
