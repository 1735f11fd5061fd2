//! Uniform cell grids on box-shaped mode domains, with boundary faces routed
//! to reset edges and reset images aligned with interior cell faces.

use serde::Serialize;

use super::FpkError;
use crate::model::{HybridModel, ResetTarget};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
    pub dx: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, cells: usize) -> Self {
        Self {
            lo,
            hi,
            cells,
            dx: (hi - lo) / cells as f64,
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.dx
    }

    /// Coordinate of face `i` (`0..=cells`).
    pub fn face(&self, i: usize) -> f64 {
        if i == self.cells {
            self.hi
        } else {
            self.lo + i as f64 * self.dx
        }
    }

    /// Face index of coordinate `x` when it lies on a face.
    pub fn face_index(&self, x: f64) -> Option<usize> {
        let s = (x - self.lo) / self.dx;
        let i = s.round();
        if i >= 0.0 && i <= self.cells as f64 && (s - i).abs() <= 1e-9 {
            Some(i as usize)
        } else {
            None
        }
    }
}

/// Cell grid of one mode. Cells are numbered `i + nx·j`; padded arrays add
/// one ghost layer on every side.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeGrid {
    pub axes: Vec<Axis>,
    pub cell_volume: f64,
}

impl ModeGrid {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn n_cells(&self) -> usize {
        self.axes.iter().map(|a| a.cells).product()
    }

    pub fn nx(&self) -> usize {
        self.axes[0].cells
    }

    pub fn ny(&self) -> usize {
        self.axes.get(1).map_or(1, |a| a.cells)
    }

    pub fn padded_len(&self) -> usize {
        (self.nx() + 2) * if self.dim() == 2 { self.ny() + 2 } else { 1 }
    }

    /// Padded index of cell `(i, j)`; `i`, `j` may be `-1` or `n` for ghosts.
    #[inline]
    pub fn padded(&self, i: isize, j: isize) -> usize {
        if self.dim() == 1 {
            (i + 1) as usize
        } else {
            ((j + 1) as usize) * (self.nx() + 2) + (i + 1) as usize
        }
    }

    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx(), c / self.nx())
    }

    pub fn cell_center(&self, c: usize) -> Vec<f64> {
        let (i, j) = self.cell_ij(c);
        let mut x = vec![self.axes[0].center(i)];
        if self.dim() == 2 {
            x.push(self.axes[1].center(j));
        }
        x
    }

    /// Number of faces normal to `axis`.
    pub fn n_faces(&self, axis: usize) -> usize {
        if axis == 0 {
            (self.nx() + 1) * self.ny()
        } else {
            self.nx() * (self.ny() + 1)
        }
    }

    /// Flat index of face `(i, j)` normal to `axis`: along `axis` the face
    /// index runs `0..=n`, across it the cell index.
    #[inline]
    pub fn face_flat(&self, axis: usize, i: usize, j: usize) -> usize {
        if axis == 0 {
            j * (self.nx() + 1) + i
        } else {
            j * self.nx() + i
        }
    }

    pub fn face_ij(&self, axis: usize, f: usize) -> (usize, usize) {
        if axis == 0 {
            (f % (self.nx() + 1), f / (self.nx() + 1))
        } else {
            (f % self.nx(), f / self.nx())
        }
    }

    pub fn face_area(&self, axis: usize) -> f64 {
        self.cell_volume / self.axes[axis].dx
    }

    pub fn face_center(&self, axis: usize, f: usize) -> Vec<f64> {
        let (i, j) = self.face_ij(axis, f);
        if self.dim() == 1 {
            return vec![self.axes[0].face(i)];
        }
        if axis == 0 {
            vec![self.axes[0].face(i), self.axes[1].center(j)]
        } else {
            vec![self.axes[0].center(i), self.axes[1].face(j)]
        }
    }

    /// Cells on the low and high side of an interior face (`None` outside).
    pub fn face_cells(&self, axis: usize, f: usize) -> (Option<usize>, Option<usize>) {
        let (i, j) = self.face_ij(axis, f);
        let nx = self.nx();
        if axis == 0 {
            let lo = (i > 0).then(|| j * nx + i - 1);
            let hi = (i < nx).then(|| j * nx + i);
            (lo, hi)
        } else {
            let lo = (j > 0).then(|| (j - 1) * nx + i);
            let hi = (j < self.ny()).then(|| j * nx + i);
            (lo, hi)
        }
    }

    /// Index of the cell containing `x`, if inside the box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = [0usize; 2];
        for (k, a) in self.axes.iter().enumerate() {
            let s = ((x[k] - a.lo) / a.dx).floor();
            if s < 0.0 || s >= a.cells as f64 {
                return None;
            }
            idx[k] = s as usize;
        }
        Some(idx[0] + self.nx() * idx[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRoute {
    Terminal { terminal: usize },
    /// Injection at interior H-face `h_face` of the target mode.
    Surface { h_face: usize },
}

/// A grid face on the box boundary of a mode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryFace {
    pub mode: usize,
    pub axis: usize,
    /// `true` on the upper side of the axis (outward normal `+e_axis`).
    pub upper: bool,
    pub model_face: usize,
    pub face: usize,
    pub cell: usize,
    pub area: f64,
    pub edge: usize,
    pub route: BoundaryRoute,
}

/// An interior face of a target mode lying on a reset image `H`.
/// Side 1 is the low-coordinate cell, side 2 the high one, `ν₁₂ = +e_axis`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HFace {
    pub mode: usize,
    pub axis: usize,
    pub face: usize,
    pub cell_lo: usize,
    pub cell_hi: usize,
    pub area: f64,
    pub edge: usize,
    /// Index of the paired source boundary face.
    pub source: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridLayout {
    pub modes: Vec<ModeGrid>,
    pub boundary: Vec<BoundaryFace>,
    pub h_faces: Vec<HFace>,
    /// `h_mask[mode][axis][face]`: the face lies on some `H`.
    #[serde(skip)]
    pub h_mask: Vec<Vec<Vec<bool>>>,
}

impl GridLayout {
    pub fn dim(&self) -> usize {
        self.modes[0].dim()
    }

    pub fn total_cells(&self) -> usize {
        self.modes.iter().map(ModeGrid::n_cells).sum()
    }
}

/// Builds a grid with `resolution` cells per axis on every mode box.
pub fn build_grid(model: &HybridModel, resolution: usize) -> Result<GridLayout, FpkError> {
    let d = model.dim();
    if d == 0 || d > 2 {
        return Err(FpkError::UnsupportedDimension(d));
    }
    if resolution == 0 {
        return Err(FpkError::InvalidArgument("resolution must be at least 1".into()));
    }
    let mut modes = Vec::with_capacity(model.modes().len());
    for (q, m) in model.modes().iter().enumerate() {
        if !m.domain.is_box() {
            return Err(FpkError::UnsupportedDomain { mode: q });
        }
        let b = m.domain.bounding_box().expect("box domain");
        let axes: Vec<Axis> = (0..d).map(|k| Axis::new(b.lo[k], b.hi[k], resolution)).collect();
        let cell_volume = axes.iter().map(|a| a.dx).product();
        modes.push(ModeGrid { axes, cell_volume });
    }

    let mut h_mask: Vec<Vec<Vec<bool>>> = modes
        .iter()
        .map(|g| (0..d).map(|k| vec![false; g.n_faces(k)]).collect())
        .collect();
    let mut boundary = Vec::new();
    let mut h_faces = Vec::new();

    for (q, g) in modes.iter().enumerate() {
        let domain = &model.mode(q).domain;
        for (mf, hs) in domain.faces().iter().enumerate() {
            let (axis, sign) = hs.axis().expect("box face");
            let upper = sign > 0.0;
            let area = g.face_area(axis);
            let n_along = g.axes[axis].cells;
            let across = if d == 2 { g.axes[1 - axis].cells } else { 1 };
            for t in 0..across {
                let (i, j) = match (axis, upper) {
                    (0, false) => (0, t),
                    (0, true) => (n_along, t),
                    (_, false) => (t, 0),
                    (_, true) => (t, n_along),
                };
                let face = g.face_flat(axis, i, j);
                let (lo, hi) = g.face_cells(axis, face);
                let cell = if upper { lo } else { hi }.expect("boundary cell");
                let center = g.face_center(axis, face);
                let edge = match model.edge_for(q, mf, &center) {
                    Some(e) => e,
                    None if model.is_declared_characteristic(q, mf) => {
                        return Err(FpkError::CharacteristicFacePresent { mode: q, face: mf })
                    }
                    None => {
                        return Err(FpkError::MisalignedPatch {
                            mode: q,
                            face: mf,
                            detail: format!("no reset patch contains face centre {center:?}"),
                        })
                    }
                };
                if d == 2 {
                    check_patch_ends(model, g, q, mf, axis, face, edge)?;
                }
                let route = match &model.edge(edge).target {
                    ResetTarget::Terminal(term) => BoundaryRoute::Terminal { terminal: *term },
                    ResetTarget::Surface(map) => {
                        let tg = &modes[map.mode];
                        let (h_axis, sign) = map.image.axis().ok_or(FpkError::MisalignedH {
                            edge,
                            detail: "image hyperplane is not axis-parallel".into(),
                        })?;
                        let coord = sign * map.image.offset;
                        let h_index = tg.axes[h_axis].face_index(coord).ok_or_else(|| {
                            FpkError::MisalignedH {
                                edge,
                                detail: format!(
                                    "image at {coord} is not a face of the target grid (spacing {})",
                                    tg.axes[h_axis].dx
                                ),
                            }
                        })?;
                        if h_index == 0 || h_index == tg.axes[h_axis].cells {
                            return Err(FpkError::MisalignedH {
                                edge,
                                detail: "image lies on the target box boundary".into(),
                            });
                        }
                        let target_face =
                            locate_image_face(tg, h_axis, h_index, &map.apply(&center)).ok_or_else(
                                || FpkError::MisalignedH {
                                    edge,
                                    detail: format!("image of face centre {center:?} is outside the target grid"),
                                },
                            )?;
                        if d == 2 {
                            check_face_image(g, axis, face, tg, h_axis, target_face, map, edge)?;
                        }
                        let (lo, hi) = tg.face_cells(h_axis, target_face);
                        h_mask[map.mode][h_axis][target_face] = true;
                        h_faces.push(HFace {
                            mode: map.mode,
                            axis: h_axis,
                            face: target_face,
                            cell_lo: lo.expect("interior"),
                            cell_hi: hi.expect("interior"),
                            area: tg.face_area(h_axis),
                            edge,
                            source: boundary.len(),
                        });
                        BoundaryRoute::Surface {
                            h_face: h_faces.len() - 1,
                        }
                    }
                };
                boundary.push(BoundaryFace {
                    mode: q,
                    axis,
                    upper,
                    model_face: mf,
                    face,
                    cell,
                    area,
                    edge,
                    route,
                });
            }
        }
    }

    Ok(GridLayout {
        modes,
        boundary,
        h_faces,
        h_mask,
    })
}

fn locate_image_face(g: &ModeGrid, axis: usize, index: usize, y: &[f64]) -> Option<usize> {
    if g.dim() == 1 {
        return Some(index);
    }
    let other = 1 - axis;
    let a = &g.axes[other];
    let s = ((y[other] - a.lo) / a.dx).floor();
    if s < 0.0 || s >= a.cells as f64 {
        return None;
    }
    let t = s as usize;
    Some(if axis == 0 {
        g.face_flat(0, index, t)
    } else {
        g.face_flat(1, t, index)
    })
}

fn face_ends(g: &ModeGrid, axis: usize, face: usize) -> [Vec<f64>; 2] {
    let c = g.face_center(axis, face);
    let other = 1 - axis;
    let half = 0.5 * g.axes[other].dx;
    let mut a = c.clone();
    let mut b = c;
    a[other] -= half;
    b[other] += half;
    [a, b]
}

fn check_patch_ends(
    model: &HybridModel,
    g: &ModeGrid,
    mode: usize,
    model_face: usize,
    axis: usize,
    face: usize,
    edge: usize,
) -> Result<(), FpkError> {
    let tol = 1e-9 * g.axes[1 - axis].dx;
    for p in face_ends(g, axis, face) {
        if !model.edge(edge).source.contains(&p, tol) {
            return Err(FpkError::MisalignedPatch {
                mode,
                face: model_face,
                detail: format!("grid face ending at {p:?} straddles a reset patch boundary"),
            });
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn check_face_image(
    g: &ModeGrid,
    axis: usize,
    face: usize,
    tg: &ModeGrid,
    h_axis: usize,
    target_face: usize,
    map: &crate::model::SurfaceMap,
    edge: usize,
) -> Result<(), FpkError> {
    let src = face_ends(g, axis, face);
    let dst = face_ends(tg, h_axis, target_face);
    let tol = 1e-9 * tg.axes[1 - h_axis].dx;
    let img: Vec<Vec<f64>> = src.iter().map(|p| map.apply(p)).collect();
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol);
    let matches = (close(&img[0], &dst[0]) && close(&img[1], &dst[1]))
        || (close(&img[0], &dst[1]) && close(&img[1], &dst[0]));
    if matches {
        Ok(())
    } else {
        Err(FpkError::MisalignedH {
            edge,
            detail: format!("grid face {face} does not map onto a single target face"),
        })
    }
}
