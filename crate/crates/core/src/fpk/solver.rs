//! Explicit finite-volume update for the forward equation with absorbing
//! boundaries, reset sources on `H` and terminal-mass rates.

use serde::{Deserialize, Serialize};

use super::density::DensityState;
use super::grid::{BoundaryRoute, GridLayout, ModeGrid};
use super::FpkError;
use crate::model::{BoundaryClass, HybridModel, ModelError};

/// Two-point flux used on interior and boundary faces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    /// Scharfetter–Gummel exponential fitting; positive for any cell Péclet
    /// number and equal to the centred flux up to `O(Δx²)`.
    #[default]
    ExponentialFitting,
    /// Face average of the density plus a centred difference.
    Centered,
}

/// Normal probability current per unit area on every face, oriented along
/// `+e_axis`, plus the outward boundary values and the one-sided values on
/// both sides of each `H`-face.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurrentField {
    /// `faces[mode][axis][face]`.
    pub faces: Vec<Vec<Vec<f64>>>,
    /// Outward `J·ν` per boundary face (clamped at 0).
    pub boundary_outflux: Vec<f64>,
    /// `[J⁽¹⁾·ν₁₂, J⁽²⁾·ν₁₂]` per `H`-face from one-sided stencils.
    pub h_one_sided: Vec<[f64; 2]>,
    /// Small negative outfluxes set to zero in this evaluation.
    pub clamped: u64,
}

/// Output of [`FpkSolver::transfer_flux`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Transfer {
    /// Mass per unit time entering each cell: exchange across `H`-faces plus
    /// reset injections.
    pub source: Vec<Vec<f64>>,
    /// `dq/dt` per terminal state.
    pub terminal_rate: Vec<f64>,
    pub total_sink: f64,
    pub total_source: f64,
    pub total_terminal: f64,
}

struct AxisCoeffs {
    wl: Vec<f64>,
    wr: Vec<f64>,
    /// Weights of the four cross-stencil cells `[lo-, hi-, lo+, hi+]`.
    cross: Vec<[f64; 4]>,
}

struct ModeCoeffs {
    axes: Vec<AxisCoeffs>,
    has_cross: bool,
    /// Per axis and face: `A_0^k(f)` and, per field, `A_r^k(f)`.
    face_drift: Vec<Vec<f64>>,
    face_noise: Vec<Vec<Vec<f64>>>,
}

/// Precomputed face coefficients and work buffers for one model and grid.
pub struct FpkSolver<'m> {
    model: &'m HybridModel,
    grid: GridLayout,
    scheme: FluxScheme,
    coeffs: Vec<ModeCoeffs>,
    padded: Vec<Vec<f64>>,
    current: CurrentField,
    rate: Vec<Vec<f64>>,
    transfer: Transfer,
    stable_dt: f64,
    clamp_total: u64,
}

#[inline]
fn bernoulli(w: f64) -> f64 {
    if w.abs() < 1e-8 {
        1.0 - 0.5 * w
    } else {
        w / w.exp_m1()
    }
}

fn eval(field: &dyn crate::model::VectorField, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    field.eval(x, &mut out);
    out
}

impl<'m> FpkSolver<'m> {
    pub fn new(model: &'m HybridModel, grid: GridLayout, scheme: FluxScheme) -> Result<Self, FpkError> {
        if grid.modes.len() != model.modes().len() || grid.dim() != model.dim() {
            return Err(FpkError::GridMismatch("grid was built for a different model".into()));
        }
        if let Some(&(mode, face)) = model.characteristic_faces().first() {
            return Err(FpkError::CharacteristicFacePresent { mode, face });
        }
        for (q, m) in model.modes().iter().enumerate() {
            for f in 0..m.domain.faces().len() {
                match model.classify_boundary(q, f) {
                    Ok(BoundaryClass::NonCharacteristic) => {}
                    Ok(BoundaryClass::Characteristic) | Err(ModelError::MixedFace { .. }) => {
                        return Err(FpkError::CharacteristicFacePresent { mode: q, face: f })
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let coeffs = grid
            .modes
            .iter()
            .enumerate()
            .map(|(q, g)| mode_coeffs(model, q, g, scheme))
            .collect();
        let stable_dt = stability_bound(model, &grid);
        let current = CurrentField {
            faces: grid
                .modes
                .iter()
                .map(|g| (0..g.dim()).map(|k| vec![0.0; g.n_faces(k)]).collect())
                .collect(),
            boundary_outflux: vec![0.0; grid.boundary.len()],
            h_one_sided: vec![[0.0; 2]; grid.h_faces.len()],
            clamped: 0,
        };
        let transfer = Transfer {
            source: grid.modes.iter().map(|g| vec![0.0; g.n_cells()]).collect(),
            terminal_rate: vec![0.0; model.terminal_states().len()],
            total_sink: 0.0,
            total_source: 0.0,
            total_terminal: 0.0,
        };
        Ok(Self {
            model,
            padded: grid.modes.iter().map(|g| vec![0.0; g.padded_len()]).collect(),
            rate: grid.modes.iter().map(|g| vec![0.0; g.n_cells()]).collect(),
            grid,
            scheme,
            coeffs,
            current,
            transfer,
            stable_dt,
            clamp_total: 0,
        })
    }

    pub fn grid(&self) -> &GridLayout {
        &self.grid
    }

    pub fn model(&self) -> &HybridModel {
        self.model
    }

    pub fn scheme(&self) -> FluxScheme {
        self.scheme
    }

    /// Largest admissible explicit step:
    /// `0.45 / max_cells max(Σ_k a_kk/Δx_k², Σ_k |b_k|/Δx_k)`.
    pub fn stability_bound(&self) -> f64 {
        self.stable_dt
    }

    /// Total number of clamped negative outfluxes so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_total
    }

    pub fn initial_state(&self, law: &crate::model::InitialLaw) -> Result<DensityState, FpkError> {
        DensityState::from_law(self.model, &self.grid, law)
    }

    fn check_state(&self, density: &DensityState) -> Result<(), FpkError> {
        let ok = density.modes.len() == self.grid.modes.len()
            && density
                .modes
                .iter()
                .zip(&self.grid.modes)
                .all(|(p, g)| p.len() == g.n_cells())
            && density.terminal.len() == self.model.terminal_states().len();
        if ok {
            Ok(())
        } else {
            Err(FpkError::GridMismatch("density does not match the grid".into()))
        }
    }

    /// Padded copy of the density with ghost values `−p_adjacent`, so the
    /// face-interpolated density on every boundary face is exactly zero.
    pub fn apply_absorbing_bc(&self, density: &DensityState) -> Result<Vec<Vec<f64>>, FpkError> {
        self.check_state(density)?;
        let mut padded: Vec<Vec<f64>> = self.grid.modes.iter().map(|g| vec![0.0; g.padded_len()]).collect();
        for (q, g) in self.grid.modes.iter().enumerate() {
            fill_padded(g, &density.modes[q], &mut padded[q]);
        }
        Ok(padded)
    }

    fn load(&mut self, density: &DensityState) {
        for (q, g) in self.grid.modes.iter().enumerate() {
            fill_padded(g, &density.modes[q], &mut self.padded[q]);
        }
    }

    /// Face fluxes from the padded arrays; boundary outfluxes clamped unless
    /// `raw`.
    fn compute_fluxes(&mut self) -> Result<(), FpkError> {
        self.compute_fluxes_inner(false)
    }

    fn compute_fluxes_inner(&mut self, raw: bool) -> Result<(), FpkError> {
        let mut max_flux = 0.0f64;
        for (q, g) in self.grid.modes.iter().enumerate() {
            let p = &self.padded[q];
            let mc = &self.coeffs[q];
            for axis in 0..g.dim() {
                let ac = &mc.axes[axis];
                let out = &mut self.current.faces[q][axis];
                let n_along = g.axes[axis].cells as isize;
                let n_across = if g.dim() == 2 { g.axes[1 - axis].cells as isize } else { 1 };
                for t in 0..n_across {
                    for s in 0..=n_along {
                        let (i, j) = if axis == 0 { (s, t) } else { (t, s) };
                        let f = g.face_flat(axis, i as usize, j as usize);
                        let (lo, hi) = if axis == 0 {
                            (g.padded(i - 1, j), g.padded(i, j))
                        } else {
                            (g.padded(i, j - 1), g.padded(i, j))
                        };
                        let mut flux = ac.wl[f] * p[lo] - ac.wr[f] * p[hi];
                        if mc.has_cross && s > 0 && s < n_along {
                            let w = &ac.cross[f];
                            let (a, b, c, d) = if axis == 0 {
                                (
                                    g.padded(i - 1, j - 1),
                                    g.padded(i, j - 1),
                                    g.padded(i - 1, j + 1),
                                    g.padded(i, j + 1),
                                )
                            } else {
                                (
                                    g.padded(i - 1, j - 1),
                                    g.padded(i - 1, j),
                                    g.padded(i + 1, j - 1),
                                    g.padded(i + 1, j),
                                )
                            };
                            flux += w[0] * p[a] + w[1] * p[b] + w[2] * p[c] + w[3] * p[d];
                        }
                        out[f] = flux;
                        max_flux = max_flux.max(flux.abs());
                    }
                }
            }
        }
        let mut clamped = 0;
        for (b, bf) in self.grid.boundary.iter().enumerate() {
            let f = &mut self.current.faces[bf.mode][bf.axis][bf.face];
            let mut j_out = if bf.upper { *f } else { -*f };
            if j_out < 0.0 && !raw {
                if j_out >= -1e-6 * max_flux {
                    j_out = 0.0;
                    clamped += 1;
                    *f = 0.0;
                } else {
                    return Err(FpkError::NegativeOutflux {
                        mode: bf.mode,
                        face: bf.model_face,
                        value: j_out,
                    });
                }
            }
            self.current.boundary_outflux[b] = j_out;
        }
        self.current.clamped = clamped;
        Ok(())
    }

    fn compute_one_sided(&mut self) {
        for (h, hf) in self.grid.h_faces.iter().enumerate() {
            self.current.h_one_sided[h] = one_sided_current(
                self.model,
                hf.mode,
                &self.grid.modes[hf.mode],
                &self.padded[hf.mode],
                &self.coeffs[hf.mode],
                hf.axis,
                hf.face,
            );
        }
    }

    /// Probability current of `density`, including one-sided values at `H`.
    pub fn probability_current(&mut self, density: &DensityState) -> Result<CurrentField, FpkError> {
        self.check_state(density)?;
        self.load(density);
        self.compute_fluxes()?;
        self.compute_one_sided();
        Ok(self.current.clone())
    }

    fn compute_rate(&mut self) {
        for (q, g) in self.grid.modes.iter().enumerate() {
            let rate = &mut self.rate[q];
            rate.iter_mut().for_each(|v| *v = 0.0);
            for axis in 0..g.dim() {
                let inv_dx = 1.0 / g.axes[axis].dx;
                let flux = &self.current.faces[q][axis];
                let mask = &self.grid.h_mask[q][axis];
                for (f, &fl) in flux.iter().enumerate() {
                    if mask[f] {
                        continue;
                    }
                    let (lo, hi) = g.face_cells(axis, f);
                    let v = fl * inv_dx;
                    if let Some(c) = lo {
                        rate[c] -= v;
                    }
                    if let Some(c) = hi {
                        rate[c] += v;
                    }
                }
            }
        }
    }

    /// `dp/dt` per cell from all non-`H` faces.
    pub fn adjoint_apply(&mut self, density: &DensityState) -> Result<Vec<Vec<f64>>, FpkError> {
        self.check_state(density)?;
        self.load(density);
        self.compute_fluxes()?;
        self.compute_rate();
        Ok(self.rate.clone())
    }

    fn compute_transfer(&mut self) {
        let t = &mut self.transfer;
        for s in t.source.iter_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        t.terminal_rate.iter_mut().for_each(|v| *v = 0.0);
        // Exchange through H-faces.
        for (q, g) in self.grid.modes.iter().enumerate() {
            for axis in 0..g.dim() {
                let area = g.face_area(axis);
                for (f, &is_h) in self.grid.h_mask[q][axis].iter().enumerate() {
                    if is_h {
                        let m = self.current.faces[q][axis][f] * area;
                        let (lo, hi) = g.face_cells(axis, f);
                        t.source[q][lo.expect("interior")] -= m;
                        t.source[q][hi.expect("interior")] += m;
                    }
                }
            }
        }
        let mut sink = 0.0;
        let mut source = 0.0;
        let mut terminal = 0.0;
        for (b, bf) in self.grid.boundary.iter().enumerate() {
            let m = self.current.boundary_outflux[b] * bf.area;
            sink += m;
            match bf.route {
                BoundaryRoute::Terminal { terminal: k } => {
                    t.terminal_rate[k] += m;
                    terminal += m;
                }
                BoundaryRoute::Surface { h_face } => {
                    let hf = &self.grid.h_faces[h_face];
                    let half = 0.5 * m;
                    t.source[hf.mode][hf.cell_lo] += half;
                    t.source[hf.mode][hf.cell_hi] += m - half;
                    source += m;
                }
            }
        }
        t.total_sink = sink;
        t.total_source = source;
        t.total_terminal = terminal;
    }

    /// Reset sources and terminal rates implied by `current`.
    pub fn transfer_flux(&mut self, current: &CurrentField) -> Result<Transfer, FpkError> {
        if current.boundary_outflux.len() != self.grid.boundary.len() {
            return Err(FpkError::GridMismatch("current does not match the grid".into()));
        }
        self.current.faces.clone_from(&current.faces);
        self.current.boundary_outflux.clone_from(&current.boundary_outflux);
        self.compute_transfer();
        Ok(self.transfer.clone())
    }

    /// One explicit Euler step of length `dt`.
    fn step(&mut self, density: &mut DensityState, dt: f64) -> Result<(), FpkError> {
        self.load(density);
        self.compute_fluxes()?;
        self.clamp_total += self.current.clamped;
        self.compute_rate();
        self.compute_transfer();
        for (q, g) in self.grid.modes.iter().enumerate() {
            let inv_vol = 1.0 / g.cell_volume;
            let p = &mut density.modes[q];
            let rate = &self.rate[q];
            let src = &self.transfer.source[q];
            let mut max = 0.0f64;
            let mut min = 0.0f64;
            for c in 0..p.len() {
                let v = p[c] + dt * (rate[c] + src[c] * inv_vol);
                p[c] = v;
                max = max.max(v);
                min = min.min(v);
            }
            if min < -1e-12 * max {
                let cell = p.iter().position(|&v| v == min).unwrap_or(0);
                return Err(FpkError::NegativeDensity {
                    mode: q,
                    cell,
                    value: min,
                });
            }
        }
        for (q, r) in density.terminal.iter_mut().zip(&self.transfer.terminal_rate) {
            *q += dt * r;
        }
        density.time += dt;
        Ok(())
    }

    fn check_dt(&self, dt: f64) -> Result<(), FpkError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(FpkError::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if dt > self.stable_dt * (1.0 + 1e-12) {
            return Err(FpkError::StabilityViolation {
                dt,
                bound: self.stable_dt,
            });
        }
        Ok(())
    }

    /// `n_steps` explicit steps of length `dt`.
    pub fn evolve(&mut self, density: &mut DensityState, dt: f64, n_steps: usize) -> Result<(), FpkError> {
        self.evolve_with(density, dt, n_steps, |_| {})
    }

    /// Like [`evolve`](Self::evolve), calling `inspect` after every step.
    pub fn evolve_with(
        &mut self,
        density: &mut DensityState,
        dt: f64,
        n_steps: usize,
        mut inspect: impl FnMut(&DensityState),
    ) -> Result<(), FpkError> {
        self.check_state(density)?;
        if n_steps == 0 {
            return Ok(());
        }
        self.check_dt(dt)?;
        for _ in 0..n_steps {
            self.step(density, dt)?;
            inspect(density);
        }
        Ok(())
    }

    /// Advances to `t_end` in equal steps no longer than `dt_max`.
    pub fn evolve_to(&mut self, density: &mut DensityState, t_end: f64, dt_max: f64) -> Result<(), FpkError> {
        self.check_dt(dt_max)?;
        let span = t_end - density.time;
        if span < 0.0 {
            return Err(FpkError::InvalidArgument(format!(
                "cannot evolve backwards from {} to {t_end}",
                density.time
            )));
        }
        if span == 0.0 {
            return Ok(());
        }
        let n = (span / dt_max).ceil().max(1.0) as usize;
        let dt = span / n as f64;
        self.evolve(density, dt, n)?;
        density.time = t_end;
        Ok(())
    }

    /// Evolves until the L1 change of the mode densities over `window` time
    /// units drops below `tol`, or `max_time` is reached. Returns the final
    /// L1 change.
    pub fn evolve_to_stationarity(
        &mut self,
        density: &mut DensityState,
        dt_max: f64,
        window: f64,
        tol: f64,
        max_time: f64,
    ) -> Result<f64, FpkError> {
        let mut change = f64::INFINITY;
        while density.time < max_time {
            let before = density.modes.clone();
            let t_end = (density.time + window).min(max_time);
            self.evolve_to(density, t_end, dt_max)?;
            change = 0.0;
            for ((g, a), b) in self.grid.modes.iter().zip(&before).zip(&density.modes) {
                for (x, y) in a.iter().zip(b) {
                    change += (x - y).abs() * g.cell_volume;
                }
            }
            if change < tol {
                break;
            }
        }
        Ok(change)
    }

    /// Stationary density of a one-dimensional layout, computed directly as
    /// the principal eigenvector of the discrete generator by shifted inverse
    /// iteration. When mass leaks to terminals this is the quasi-stationary
    /// profile; terminal masses are set to zero and the modes carry unit mass.
    ///
    /// Cells are ordered by position so that the matrix is banded when resets
    /// connect nearby points; the factorization is dense within the band.
    pub fn stationary_state(&mut self) -> Result<DensityState, FpkError> {
        if self.grid.dim() != 1 {
            return Err(FpkError::InvalidArgument(
                "direct stationary solve supports one-dimensional grids".into(),
            ));
        }
        let n_terminal = self.model.terminal_states().len();
        let offsets: Vec<usize> = self
            .grid
            .modes
            .iter()
            .scan(0, |acc, g| {
                let o = *acc;
                *acc += g.n_cells();
                Some(o)
            })
            .collect();
        let n: usize = self.grid.modes.iter().map(|g| g.n_cells()).sum();
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
        for (q, g) in self.grid.modes.iter().enumerate() {
            for c in 0..g.n_cells() {
                order.push((g.cell_center(c)[0], offsets[q] + c));
            }
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut pos = vec![0; n];
        for (r, &(_, gidx)) in order.iter().enumerate() {
            pos[gidx] = r;
        }

        // Columns of the mass-to-mass-rate matrix, in position order.
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut unit = DensityState::zeros(&self.grid, n_terminal);
        for q in 0..self.grid.modes.len() {
            let vol = self.grid.modes[q].cell_volume;
            for c in 0..self.grid.modes[q].n_cells() {
                unit.modes[q][c] = 1.0 / vol;
                self.load(&unit);
                self.compute_fluxes_inner(true)?;
                self.compute_rate();
                self.compute_transfer();
                unit.modes[q][c] = 0.0;
                let col = pos[offsets[q] + c];
                for (r, g) in self.grid.modes.iter().enumerate() {
                    for cell in 0..g.n_cells() {
                        let v = self.rate[r][cell] * g.cell_volume + self.transfer.source[r][cell];
                        if v != 0.0 {
                            entries.push((pos[offsets[r] + cell], col, v));
                        }
                    }
                }
            }
        }
        let (mut kl, mut ku) = (0, 0);
        let mut diag_max = 0.0f64;
        for &(r, c, v) in &entries {
            if r > c {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
            if r == c {
                diag_max = diag_max.max(v.abs());
            }
        }
        if (kl + ku + 1).saturating_mul(n) > 50_000_000 {
            return Err(FpkError::InvalidArgument(format!(
                "band of width {} is too wide for a direct solve",
                kl + ku + 1
            )));
        }
        let shift = 1e-9 * diag_max.max(1e-300);
        let mut band = Band::new(n, kl, ku);
        for &(r, c, v) in &entries {
            band.add(r, c, v);
        }
        for r in 0..n {
            band.add(r, r, -shift);
        }
        band.factor()?;

        let mut x = vec![1.0 / n as f64; n];
        for _ in 0..50 {
            let mut y = x.clone();
            band.solve(&mut y);
            let total: f64 = y.iter().sum();
            if !total.is_finite() || total == 0.0 {
                return Err(FpkError::InvalidArgument("stationary iteration broke down".into()));
            }
            y.iter_mut().for_each(|v| *v /= total);
            let change: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
            x = y;
            if change < 1e-14 {
                break;
            }
        }

        let mut out = DensityState::zeros(&self.grid, n_terminal);
        for (q, g) in self.grid.modes.iter().enumerate() {
            let p = &mut out.modes[q];
            for (c, v) in p.iter_mut().enumerate() {
                *v = x[pos[offsets[q] + c]] / g.cell_volume;
            }
            let max = p.iter().cloned().fold(0.0, f64::max);
            if let Some((cell, &value)) = p.iter().enumerate().find(|(_, &v)| v < -1e-10 * max) {
                return Err(FpkError::NegativeDensity { mode: q, cell, value });
            }
        }
        Ok(out)
    }
}

fn fill_padded(g: &ModeGrid, p: &[f64], out: &mut [f64]) {
    let nx = g.nx() as isize;
    if g.dim() == 1 {
        out[1..=g.nx()].copy_from_slice(p);
        out[0] = -p[0];
        out[g.nx() + 1] = -p[g.nx() - 1];
        return;
    }
    let ny = g.ny() as isize;
    for j in 0..ny {
        let row = &p[(j * nx) as usize..((j + 1) * nx) as usize];
        let start = g.padded(0, j);
        out[start..start + nx as usize].copy_from_slice(row);
        out[g.padded(-1, j)] = -row[0];
        out[g.padded(nx, j)] = -row[(nx - 1) as usize];
    }
    for i in 0..nx {
        out[g.padded(i, -1)] = -p[i as usize];
        out[g.padded(i, ny)] = -p[((ny - 1) * nx + i) as usize];
    }
    for (i, j) in [(-1, -1), (nx, -1), (-1, ny), (nx, ny)] {
        out[g.padded(i, j)] = 0.0;
    }
}

/// Cell centre, with out-of-range indices clamped to the adjacent cell.
fn clamped_center(g: &ModeGrid, i: isize, j: isize) -> Vec<f64> {
    let i = i.clamp(0, g.nx() as isize - 1) as usize;
    let j = j.clamp(0, g.ny() as isize - 1) as usize;
    g.cell_center(i + g.nx() * j)
}

fn mode_coeffs(model: &HybridModel, q: usize, g: &ModeGrid, scheme: FluxScheme) -> ModeCoeffs {
    let fields = &model.mode(q).fields;
    let d = g.dim();
    let mut axes = Vec::with_capacity(d);
    let mut has_cross = false;
    let mut face_drift = Vec::with_capacity(d);
    let mut face_noise = Vec::with_capacity(d);
    for axis in 0..d {
        let nf = g.n_faces(axis);
        let dx = g.axes[axis].dx;
        let mut wl = vec![0.0; nf];
        let mut wr = vec![0.0; nf];
        let mut cross = vec![[0.0; 4]; if d == 2 { nf } else { 0 }];
        let mut drift_k = vec![0.0; nf];
        let mut noise_k = vec![vec![0.0; fields.diffusion.len()]; nf];
        for f in 0..nf {
            let xf = g.face_center(axis, f);
            let (i, j) = g.face_ij(axis, f);
            let (i, j) = (i as isize, j as isize);
            let (lo, hi) = if axis == 0 {
                (clamped_center(g, i - 1, j), clamped_center(g, i, j))
            } else {
                (clamped_center(g, i, j - 1), clamped_center(g, i, j))
            };
            let a0 = eval(fields.drift.as_ref(), &xf)[axis];
            let af: Vec<Vec<f64>> = fields.diffusion.iter().map(|r| eval(r.as_ref(), &xf)).collect();
            let c_at = |x: &[f64]| -> f64 {
                0.5 * fields
                    .diffusion
                    .iter()
                    .zip(&af)
                    .map(|(r, a)| a[axis] * eval(r.as_ref(), x)[axis])
                    .sum::<f64>()
            };
            let cl = c_at(&lo);
            let cr = c_at(&hi);
            let diff = 0.5 * (cl + cr);
            let beta = a0 + (cl - cr) / dx;
            let (l, r) = match scheme {
                FluxScheme::Centered => (0.5 * beta + diff / dx, -0.5 * beta + diff / dx),
                FluxScheme::ExponentialFitting => {
                    if diff > 1e-14 * beta.abs() * dx && diff > 0.0 {
                        let w = beta * dx / diff;
                        (diff / dx * bernoulli(-w), diff / dx * bernoulli(w))
                    } else {
                        (beta.max(0.0), (-beta).max(0.0))
                    }
                }
            };
            wl[f] = l;
            wr[f] = r;
            drift_k[f] = a0;
            for (slot, a) in noise_k[f].iter_mut().zip(&af) {
                *slot = a[axis];
            }
            let along = if axis == 0 { i } else { j };
            let n_along = g.axes[axis].cells as isize;
            if d == 2 && along > 0 && along < n_along {
                let other = 1 - axis;
                let dy = g.axes[other].dx;
                // −½ Σ_r A_r^axis(f) ∂_other(p A_r^other), averaged over the
                // two cells sharing the face.
                let cells = if axis == 0 {
                    [(i - 1, j - 1), (i, j - 1), (i - 1, j + 1), (i, j + 1)]
                } else {
                    [(i - 1, j - 1), (i - 1, j), (i + 1, j - 1), (i + 1, j)]
                };
                for (s, &(ci, cj)) in cells.iter().enumerate() {
                    let x = clamped_center(g, ci, cj);
                    let sign = if s < 2 { -1.0 } else { 1.0 };
                    let w: f64 = fields
                        .diffusion
                        .iter()
                        .zip(&af)
                        .map(|(r, a)| a[axis] * eval(r.as_ref(), &x)[other])
                        .sum();
                    cross[f][s] = -0.5 * w * sign / (4.0 * dy);
                    if cross[f][s] != 0.0 {
                        has_cross = true;
                    }
                }
            }
        }
        axes.push(AxisCoeffs { wl, wr, cross });
        face_drift.push(drift_k);
        face_noise.push(noise_k);
    }
    ModeCoeffs {
        axes,
        has_cross,
        face_drift,
        face_noise,
    }
}

fn stability_bound(model: &HybridModel, grid: &GridLayout) -> f64 {
    let mut worst = 0.0f64;
    for (q, g) in grid.modes.iter().enumerate() {
        for c in 0..g.n_cells() {
            let x = g.cell_center(c);
            let co = model.ito_coefficients(q, &x);
            let d = g.dim();
            let mut diff = 0.0;
            let mut adv = 0.0;
            for k in 0..d {
                let dx = g.axes[k].dx;
                diff += co.diffusion[k * d + k] / (dx * dx);
                adv += co.drift[k].abs() / dx;
            }
            worst = worst.max(diff.max(adv));
        }
    }
    if worst > 0.0 {
        0.45 / worst
    } else {
        f64::INFINITY
    }
}

/// One-sided currents on both sides of an `H`-face, each from the cells on
/// its own side only. With three cells available the face density and
/// `∂(cp)` come from the quadratic through the cell values; with two, from
/// the line; with one, the gradient term is dropped.
fn one_sided_current(
    model: &HybridModel,
    q: usize,
    g: &ModeGrid,
    p: &[f64],
    mc: &ModeCoeffs,
    axis: usize,
    face: usize,
) -> [f64; 2] {
    let fields = &model.mode(q).fields;
    let (i, j) = g.face_ij(axis, face);
    let (i, j) = (i as isize, j as isize);
    let dx = g.axes[axis].dx;
    let n_along = g.axes[axis].cells as isize;
    let along = if axis == 0 { i } else { j };
    let at = |k: isize| -> (isize, isize) {
        if axis == 0 {
            (i + k, j)
        } else {
            (i, j + k)
        }
    };
    let a0 = mc.face_drift[axis][face];
    let af = &mc.face_noise[axis][face];
    let c_at = |x: &[f64]| -> f64 {
        let mut out = vec![0.0; x.len()];
        0.5 * fields
            .diffusion
            .iter()
            .zip(af)
            .map(|(r, a)| {
                r.eval(x, &mut out);
                a * out[axis]
            })
            .sum::<f64>()
    };
    // `cells` are ordered away from the face; `sign` is +1 when they lie on
    // the high side.
    let side = |cells: &[isize], sign: f64| -> f64 {
        let mut pv = [0.0; 3];
        let mut cp = [0.0; 3];
        for (s, &k) in cells.iter().enumerate() {
            let (ci, cj) = at(k);
            pv[s] = p[g.padded(ci, cj)];
            cp[s] = c_at(&g.cell_center(ci as usize + g.nx() * cj as usize)) * pv[s];
        }
        let (p_face, d_away) = if cells.len() == 3 {
            (
                (15.0 * pv[0] - 10.0 * pv[1] + 3.0 * pv[2]) / 8.0,
                -(2.0 * cp[0] - 3.0 * cp[1] + cp[2]) / dx,
            )
        } else if cells.len() == 2 {
            (1.5 * pv[0] - 0.5 * pv[1], (cp[1] - cp[0]) / dx)
        } else {
            (pv[0], 0.0)
        };
        a0 * p_face - sign * d_away
    };
    let lo: Vec<isize> = (1..=3).filter(|k| along - k >= 0).map(|k| -k).collect();
    let hi: Vec<isize> = (0..3).filter(|k| along + k < n_along).collect();
    [side(&lo, -1.0), side(&hi, 1.0)]
}

/// Square banded matrix factored in place without pivoting; callers supply
/// column diagonally dominant matrices.
struct Band {
    n: usize,
    kl: usize,
    width: usize,
    data: Vec<f64>,
}

impl Band {
    fn new(n: usize, kl: usize, ku: usize) -> Self {
        // Elimination without pivoting keeps fill inside the band.
        let width = kl + ku + 1;
        Self {
            n,
            kl,
            width,
            data: vec![0.0; n * width],
        }
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        r * self.width + (c + self.kl - r)
    }

    fn add(&mut self, r: usize, c: usize, v: f64) {
        let i = self.idx(r, c);
        self.data[i] += v;
    }

    fn ku(&self) -> usize {
        self.width - self.kl - 1
    }

    fn factor(&mut self) -> Result<(), FpkError> {
        let (n, kl, ku) = (self.n, self.kl, self.ku());
        for k in 0..n {
            let pivot = self.data[self.idx(k, k)];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(FpkError::InvalidArgument(format!("zero pivot at row {k}")));
            }
            let last_col = (k + ku).min(n - 1);
            for r in k + 1..=(k + kl).min(n - 1) {
                let ir = self.idx(r, k);
                let l = self.data[ir] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ir] = l;
                for c in k + 1..=last_col {
                    let src = self.data[self.idx(k, c)];
                    let dst = self.idx(r, c);
                    self.data[dst] -= l * src;
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku());
        for r in 0..n {
            let mut acc = b[r];
            for c in r.saturating_sub(kl)..r {
                acc -= self.data[self.idx(r, c)] * b[c];
            }
            b[r] = acc;
        }
        for r in (0..n).rev() {
            let mut acc = b[r];
            for c in r + 1..=(r + ku).min(n - 1) {
                acc -= self.data[self.idx(r, c)] * b[c];
            }
            b[r] = acc / self.data[self.idx(r, r)];
        }
    }
}
