//! Hybrid model: mode domains, Stratonovich vector fields, reset edges and
//! terminal states, plus the Itô coefficients derived from them.

mod field;
mod geometry;
mod spec;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use field::{finite_difference_jacobian, AffineField, FnField, VectorField, VectorFieldSet};
pub use geometry::{Aabb, HalfSpace, PolyDomain};
pub use spec::{
    AffineFieldDoc, EdgeDoc, FaceDoc, ModeDoc, ModelDocument, SourceDoc, TargetDoc,
};

pub(crate) use geometry::dot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid dimension {0}")]
    InvalidDimension(usize),
    #[error("invalid face: {0}")]
    InvalidFace(String),
    #[error("mode {mode} has an empty interior")]
    EmptyDomain { mode: usize },
    #[error("mode {mode}: {detail}")]
    FieldDimension { mode: usize, detail: String },
    #[error("unknown mode index {0}")]
    UnknownMode(usize),
    #[error("mode {mode} has no face {face}")]
    UnknownFace { mode: usize, face: usize },
    #[error("unknown terminal state `{0}`")]
    UnknownTerminal(String),
    #[error("duplicate terminal state `{0}`")]
    DuplicateTerminal(String),
    #[error("face {face} of mode {mode} has no reset edge and is not declared characteristic")]
    UnassignedFace { mode: usize, face: usize },
    #[error("reset edge {edge}: image does not lie in the open interior of the target ({detail})")]
    TargetOnBoundary { edge: usize, detail: String },
    #[error("reset edges overlap on face {face} of mode {mode}")]
    OverlappingSources { mode: usize, face: usize },
    #[error("face {face} of mode {mode} is declared characteristic but also carries a reset edge")]
    ConflictingFace { mode: usize, face: usize },
    #[error("reset edge {edge}: affine map is not injective on its source face")]
    DegenerateReset { edge: usize },
    #[error("reset edge {edge} does not target a surface")]
    NotSurfaceTarget { edge: usize },
    #[error("face {face} of mode {mode} is partly characteristic")]
    MixedFace { mode: usize, face: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// One discrete mode: a polyhedral domain and its vector fields.
#[derive(Clone, Debug)]
pub struct Mode {
    pub name: String,
    pub domain: PolyDomain,
    pub fields: VectorFieldSet,
}

/// Boundary patch that triggers a reset: face `face` of mode `mode`,
/// optionally restricted to `{θ : ⟨n_i, θ⟩ ≤ c_i ∀i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetSource {
    pub mode: usize,
    pub face: usize,
    #[serde(default)]
    pub patch: Vec<HalfSpace>,
}

impl ResetSource {
    pub fn new(mode: usize, face: usize) -> Self {
        Self {
            mode,
            face,
            patch: Vec::new(),
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.patch.iter().all(|h| h.contains(x, tol))
    }
}

/// Affine reset `Φ(θ) = Rθ + b` into `mode`, with its image hyperplane `H`
/// and constant surface Jacobian `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMap {
    pub mode: usize,
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
    pub image: HalfSpace,
    pub jacobian: f64,
}

impl SurfaceMap {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for i in 0..d {
            let row = &self.matrix[i * d..(i + 1) * d];
            out[i] = self.offset[i] + row.iter().zip(x).map(|(m, v)| m * v).sum::<f64>();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ResetTarget {
    Terminal(usize),
    Surface(SurfaceMap),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResetEdge {
    pub source: ResetSource,
    pub target: ResetTarget,
}

/// Declarative reset target, resolved by [`build_model`].
#[derive(Clone, Debug, PartialEq)]
pub enum TargetSpec {
    Terminal(String),
    Surface {
        mode: usize,
        matrix: Vec<f64>,
        offset: Vec<f64>,
    },
}

impl TargetSpec {
    pub fn identity(mode: usize, dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self::Surface {
            mode,
            matrix,
            offset: vec![0.0; dim],
        }
    }

    pub fn translation(mode: usize, shift: Vec<f64>) -> Self {
        let dim = shift.len();
        match Self::identity(mode, dim) {
            Self::Surface { matrix, .. } => Self::Surface {
                mode,
                matrix,
                offset: shift,
            },
            _ => unreachable!(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModeSpec {
    pub name: String,
    pub faces: Vec<HalfSpace>,
    pub fields: VectorFieldSet,
}

#[derive(Clone, Debug)]
pub struct EdgeSpec {
    pub source: ResetSource,
    pub target: TargetSpec,
}

/// Declarative description consumed by [`build_model`].
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub dimension: usize,
    pub modes: Vec<ModeSpec>,
    pub terminal_states: Vec<String>,
    pub reset_edges: Vec<EdgeSpec>,
    pub characteristic_faces: Vec<(usize, usize)>,
}

/// Validated hybrid model. Immutable once built.
#[derive(Clone, Debug)]
pub struct HybridModel {
    dim: usize,
    modes: Vec<Mode>,
    terminal_states: Vec<String>,
    edges: Vec<ResetEdge>,
    characteristic: Vec<(usize, usize)>,
    /// `face_edges[mode][face]` lists the edges whose source is that face.
    face_edges: Vec<Vec<Vec<usize>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryClass {
    Characteristic,
    NonCharacteristic,
}

/// Itô drift `b` and diffusion matrix `a` (row-major) at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoCoefficients {
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
}

/// Initial law shared by the path simulator and the density solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    /// Dirac mass at a point of a mode.
    Point { mode: usize, position: Vec<f64> },
    /// Isotropic Gaussian restricted to the mode domain.
    Gaussian { mode: usize, mean: Vec<f64>, std: f64 },
    /// All mass on a terminal state.
    Terminal { terminal: usize },
}

impl HybridModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode(&self, q: usize) -> &Mode {
        &self.modes[q]
    }

    pub fn terminal_states(&self) -> &[String] {
        &self.terminal_states
    }

    pub fn terminal_index(&self, name: &str) -> Option<usize> {
        self.terminal_states.iter().position(|t| t == name)
    }

    pub fn edges(&self) -> &[ResetEdge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &ResetEdge {
        &self.edges[e]
    }

    pub fn characteristic_faces(&self) -> &[(usize, usize)] {
        &self.characteristic
    }

    pub fn is_declared_characteristic(&self, mode: usize, face: usize) -> bool {
        self.characteristic.contains(&(mode, face))
    }

    pub fn edges_on_face(&self, mode: usize, face: usize) -> &[usize] {
        &self.face_edges[mode][face]
    }

    /// Edge whose source patch contains `point` on face `face` of `mode`.
    pub fn edge_for(&self, mode: usize, face: usize, point: &[f64]) -> Option<usize> {
        let candidates = &self.face_edges[mode][face];
        if candidates.len() == 1 && self.edges[candidates[0]].source.patch.is_empty() {
            return Some(candidates[0]);
        }
        let tol = 1e-9 * self.modes[mode].domain.scale();
        candidates
            .iter()
            .copied()
            .find(|&e| self.edges[e].source.contains(point, tol))
    }

    /// Itô coefficients: `a^{ij} = Σ_r A_r^i A_r^j`,
    /// `b^i = A_0^i + ½ Σ_r Σ_j A_r^j ∂_j A_r^i`.
    pub fn ito_coefficients(&self, mode: usize, point: &[f64]) -> ItoCoefficients {
        let d = self.dim;
        let mut out = ItoCoefficients {
            drift: vec![0.0; d],
            diffusion: vec![0.0; d * d],
        };
        let mut scratch = vec![0.0; d + d * d];
        self.ito_coefficients_into(mode, point, &mut out, &mut scratch);
        out
    }

    pub(crate) fn ito_coefficients_into(
        &self,
        mode: usize,
        point: &[f64],
        out: &mut ItoCoefficients,
        scratch: &mut [f64],
    ) {
        let d = self.dim;
        let fields = &self.modes[mode].fields;
        let (col, jac) = scratch.split_at_mut(d);
        fields.drift.eval(point, &mut out.drift);
        out.diffusion.iter_mut().for_each(|v| *v = 0.0);
        for field in &fields.diffusion {
            field.eval(point, col);
            field.jacobian(point, jac);
            for i in 0..d {
                let mut corr = 0.0;
                for j in 0..d {
                    out.diffusion[i * d + j] += col[i] * col[j];
                    corr += col[j] * jac[i * d + j];
                }
                out.drift[i] += 0.5 * corr;
            }
        }
    }

    /// Surface Jacobian `h` of the reset on `edge` at `point` (constant for
    /// affine maps; `1` in one dimension).
    pub fn jacobian_factor(&self, edge: usize, _point: &[f64]) -> Result<f64, ModelError> {
        match &self.edges[edge].target {
            ResetTarget::Surface(map) => Ok(map.jacobian),
            ResetTarget::Terminal(_) => Err(ModelError::NotSurfaceTarget { edge }),
        }
    }

    /// Characteristic iff `Σ_r ⟨A_r, ν⟩² = 0` at every sampled face point.
    pub fn classify_boundary(&self, mode: usize, face: usize) -> Result<BoundaryClass, ModelError> {
        let m = self.modes.get(mode).ok_or(ModelError::UnknownMode(mode))?;
        let hs = m
            .domain
            .faces()
            .get(face)
            .ok_or(ModelError::UnknownFace { mode, face })?;
        let d = self.dim;
        let mut col = vec![0.0; d];
        let mut any_zero = false;
        let mut any_positive = false;
        for p in m.domain.face_samples(face) {
            let mut normal_sq = 0.0;
            let mut total_sq = 0.0;
            for field in &m.fields.diffusion {
                field.eval(&p, &mut col);
                let c = dot(&col, &hs.normal);
                normal_sq += c * c;
                total_sq += dot(&col, &col);
            }
            if normal_sq > 1e-20 * total_sq && normal_sq > 0.0 {
                any_positive = true;
            } else {
                any_zero = true;
            }
        }
        match (any_zero, any_positive) {
            (true, true) => Err(ModelError::MixedFace { mode, face }),
            (false, true) => Ok(BoundaryClass::NonCharacteristic),
            _ => Ok(BoundaryClass::Characteristic),
        }
    }

    /// Smallest distance-like scale of the model, used for nudges.
    pub fn mode_scale(&self, mode: usize) -> f64 {
        self.modes[mode].domain.scale()
    }
}

fn tangent_basis(normal: &[f64]) -> Vec<Vec<f64>> {
    let d = normal.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d.saturating_sub(1));
    for k in 0..d {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        let c = dot(&v, normal);
        v.iter_mut().zip(normal).for_each(|(x, n)| *x -= c * n);
        for b in &basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
        if basis.len() + 1 == d {
            break;
        }
    }
    basis
}

/// Image hyperplane and surface Jacobian of `θ ↦ Rθ + b` restricted to the
/// hyperplane `face`.
fn surface_image(
    face: &HalfSpace,
    matrix: &[f64],
    offset: &[f64],
) -> Option<(HalfSpace, f64)> {
    let d = offset.len();
    let anchor: Vec<f64> = face.normal.iter().map(|n| n * face.offset).collect();
    let mut image_anchor = vec![0.0; d];
    for i in 0..d {
        image_anchor[i] =
            offset[i] + (0..d).map(|j| matrix[i * d + j] * anchor[j]).sum::<f64>();
    }
    if d == 1 {
        let plane = HalfSpace::new(vec![1.0], image_anchor[0]).ok()?;
        return Some((plane, 1.0));
    }
    let tangent = tangent_basis(&face.normal);
    // columns of M = R U
    let m = DMatrix::from_fn(d, d - 1, |i, c| {
        (0..d).map(|j| matrix[i * d + j] * tangent[c][j]).sum::<f64>()
    });
    let gram = m.transpose() * &m;
    let det = gram.determinant();
    if !(det > 1e-24) {
        return None;
    }
    let h = det.sqrt();
    let mut normal = vec![0.0; d];
    for i in 0..d {
        let minor = m.clone().remove_row(i);
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        normal[i] = sign * minor.determinant();
    }
    let norm = dot(&normal, &normal).sqrt();
    if !(norm > 0.0) {
        return None;
    }
    normal.iter_mut().for_each(|v| *v /= norm);
    let c = dot(&normal, &image_anchor);
    Some((HalfSpace { normal, offset: c }, h))
}

/// Validates a declarative model description.
pub fn build_model(spec: ModelSpec) -> Result<HybridModel, ModelError> {
    let d = spec.dimension;
    if d == 0 {
        return Err(ModelError::InvalidDimension(0));
    }
    for (i, t) in spec.terminal_states.iter().enumerate() {
        if spec.terminal_states[..i].contains(t) {
            return Err(ModelError::DuplicateTerminal(t.clone()));
        }
    }

    let mut modes = Vec::with_capacity(spec.modes.len());
    for (q, m) in spec.modes.into_iter().enumerate() {
        if m.fields.dim() != d {
            return Err(ModelError::FieldDimension {
                mode: q,
                detail: format!("drift has dimension {}, expected {d}", m.fields.dim()),
            });
        }
        if m.fields.diffusion.len() != d {
            return Err(ModelError::FieldDimension {
                mode: q,
                detail: format!("{} diffusion fields, expected {d}", m.fields.diffusion.len()),
            });
        }
        if let Some(f) = m.fields.diffusion.iter().find(|f| f.dim() != d) {
            return Err(ModelError::FieldDimension {
                mode: q,
                detail: format!("diffusion field of dimension {}", f.dim()),
            });
        }
        let faces = m
            .faces
            .into_iter()
            .map(|f| HalfSpace::new(f.normal, f.offset))
            .collect::<Result<Vec<_>, _>>()?;
        let domain = PolyDomain::new(d, faces)?;
        if domain.interior_point().is_none() {
            return Err(ModelError::EmptyDomain { mode: q });
        }
        modes.push(Mode {
            name: m.name,
            domain,
            fields: m.fields,
        });
    }

    let mut edges = Vec::with_capacity(spec.reset_edges.len());
    for (e, edge) in spec.reset_edges.into_iter().enumerate() {
        let src = &edge.source;
        let mode = modes.get(src.mode).ok_or(ModelError::UnknownMode(src.mode))?;
        let face = mode
            .domain
            .faces()
            .get(src.face)
            .ok_or(ModelError::UnknownFace {
                mode: src.mode,
                face: src.face,
            })?
            .clone();
        let patch = src
            .patch
            .iter()
            .map(|h| HalfSpace::new(h.normal.clone(), h.offset))
            .collect::<Result<Vec<_>, _>>()?;
        let source = ResetSource {
            mode: src.mode,
            face: src.face,
            patch,
        };
        let target = match edge.target {
            TargetSpec::Terminal(name) => ResetTarget::Terminal(
                spec.terminal_states
                    .iter()
                    .position(|t| *t == name)
                    .ok_or(ModelError::UnknownTerminal(name))?,
            ),
            TargetSpec::Surface {
                mode: target_mode,
                matrix,
                offset,
            } => {
                let target = modes.get(target_mode).ok_or(ModelError::UnknownMode(target_mode))?;
                if matrix.len() != d * d || offset.len() != d {
                    return Err(ModelError::InvalidParameter(format!(
                        "reset edge {e}: affine map must be {d}x{d} plus a {d}-vector"
                    )));
                }
                let (image, jacobian) = surface_image(&face, &matrix, &offset)
                    .ok_or(ModelError::DegenerateReset { edge: e })?;
                let map = SurfaceMap {
                    mode: target_mode,
                    matrix,
                    offset,
                    image,
                    jacobian,
                };
                check_target_interior(e, &mode.domain, &source, &map, &target.domain)?;
                ResetTarget::Surface(map)
            }
        };
        edges.push(ResetEdge { source, target });
    }

    let mut characteristic = spec.characteristic_faces;
    characteristic.sort_unstable();
    characteristic.dedup();
    for &(q, f) in &characteristic {
        let m = modes.get(q).ok_or(ModelError::UnknownMode(q))?;
        if f >= m.domain.faces().len() {
            return Err(ModelError::UnknownFace { mode: q, face: f });
        }
    }

    let mut face_edges: Vec<Vec<Vec<usize>>> = modes
        .iter()
        .map(|m| vec![Vec::new(); m.domain.faces().len()])
        .collect();
    for (e, edge) in edges.iter().enumerate() {
        face_edges[edge.source.mode][edge.source.face].push(e);
    }

    for (q, m) in modes.iter().enumerate() {
        let tol = 1e-9 * m.domain.scale();
        for f in 0..m.domain.faces().len() {
            let on_face = &face_edges[q][f];
            let declared = characteristic.contains(&(q, f));
            if declared && !on_face.is_empty() {
                return Err(ModelError::ConflictingFace { mode: q, face: f });
            }
            if declared {
                continue;
            }
            if on_face.is_empty() {
                return Err(ModelError::UnassignedFace { mode: q, face: f });
            }
            let unrestricted = on_face
                .iter()
                .filter(|&&e| edges[e].source.patch.is_empty())
                .count();
            if unrestricted > 0 && on_face.len() > 1 {
                return Err(ModelError::OverlappingSources { mode: q, face: f });
            }
            for p in m.domain.face_samples(f) {
                let covering = on_face
                    .iter()
                    .filter(|&&e| edges[e].source.contains(&p, tol))
                    .count();
                match covering {
                    0 => return Err(ModelError::UnassignedFace { mode: q, face: f }),
                    1 => {}
                    _ => return Err(ModelError::OverlappingSources { mode: q, face: f }),
                }
            }
        }
    }

    Ok(HybridModel {
        dim: d,
        modes,
        terminal_states: spec.terminal_states,
        edges,
        characteristic,
        face_edges,
    })
}

fn check_target_interior(
    edge: usize,
    source_domain: &PolyDomain,
    source: &ResetSource,
    map: &SurfaceMap,
    target: &PolyDomain,
) -> Result<(), ModelError> {
    let scale = target.scale();
    let tol = 1e-9 * scale;
    for (j, f) in target.faces().iter().enumerate() {
        let cos = dot(&f.normal, &map.image.normal);
        if (cos.abs() - 1.0).abs() < 1e-12 && (cos.signum() * map.image.offset - f.offset).abs() <= tol
        {
            return Err(ModelError::TargetOnBoundary {
                edge,
                detail: format!("image hyperplane coincides with target face {j}"),
            });
        }
    }
    let src_tol = 1e-9 * source_domain.scale();
    let mut checked = 0usize;
    for p in source_domain.face_samples(source.face) {
        if !source.contains(&p, src_tol) {
            continue;
        }
        checked += 1;
        let y = map.apply(&p);
        let v = target.max_violation(&y);
        if v >= -tol {
            return Err(ModelError::TargetOnBoundary {
                edge,
                detail: format!("source point {p:?} maps to {y:?}"),
            });
        }
    }
    if checked == 0 {
        return Err(ModelError::TargetOnBoundary {
            edge,
            detail: "source patch has no interior sample".into(),
        });
    }
    Ok(())
}

/// Convenience for specs built in code.
pub fn mode_spec(name: &str, faces: Vec<HalfSpace>, fields: VectorFieldSet) -> ModeSpec {
    ModeSpec {
        name: name.to_string(),
        faces,
        fields,
    }
}

/// Fields with zero drift and constant diffusion columns `gamma`.
pub fn constant_fields(drift: Vec<f64>, gamma: &[f64]) -> VectorFieldSet {
    VectorFieldSet::affine_with_constant_noise(AffineField::constant(drift), gamma)
}

pub type SharedModel = Arc<HybridModel>;
