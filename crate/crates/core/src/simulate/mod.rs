//! Monte-Carlo paths: Euler–Maruyama inside a mode, straight-segment hit
//! detection, resets and terminal absorption.

mod engine;
mod ensemble;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{HybridModel, InitialLaw, ModelError, PolyDomain, ResetTarget};

pub use engine::{simulate_path, SimConfig, Trajectory};
pub use ensemble::{
    ensemble, ensemble_with_functional, EmpiricalMeasure, ModeCloud, PathFunctional,
    PathIntegrals, Snapshot,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("segment starts on or outside the domain boundary (face {face})")]
    StartOnBoundary { face: usize },
    #[error("declared characteristic face {face} of mode {mode} was reached")]
    CharacteristicFaceHit { mode: usize, face: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where a path currently is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Mode { mode: usize, position: Vec<f64> },
    Terminal { terminal: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathState {
    pub location: Location,
    pub time: f64,
}

impl PathState {
    pub fn in_mode(mode: usize, position: Vec<f64>, time: f64) -> Self {
        Self {
            location: Location::Mode { mode, position },
            time,
        }
    }

    pub fn terminal(terminal: usize, time: f64) -> Self {
        Self {
            location: Location::Terminal { terminal },
            time,
        }
    }
}

/// First exit of a straight segment through the domain boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub fraction: f64,
    pub face: usize,
    pub point: Vec<f64>,
}

/// One reset: pre-jump boundary point and the state right after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub mode: usize,
    pub face: usize,
    pub edge: usize,
    pub pre: Vec<f64>,
    pub post: Location,
}

/// Euler–Maruyama step on the Itô form. `noise[r]` is the `N(0, dt)`
/// increment of the `r`-th driving Brownian motion.
pub fn step(
    model: &HybridModel,
    state: &PathState,
    dt: f64,
    noise: &[f64],
) -> Result<PathState, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let (mode, position) = match &state.location {
        Location::Mode { mode, position } => (*mode, position),
        Location::Terminal { .. } => {
            return Err(SimError::InvalidArgument("step from a terminal state".into()))
        }
    };
    let d = model.dim();
    let coeffs = model.ito_coefficients(mode, position);
    let mut next: Vec<f64> = position
        .iter()
        .zip(&coeffs.drift)
        .map(|(x, b)| x + b * dt)
        .collect();
    let mut col = vec![0.0; d];
    for (field, xi) in model.mode(mode).fields.diffusion.iter().zip(noise) {
        field.eval(position, &mut col);
        next.iter_mut().zip(&col).for_each(|(x, c)| *x += c * xi);
    }
    Ok(PathState::in_mode(mode, next, state.time + dt))
}

/// Smallest crossing fraction of `start → end` over all faces; the hit point
/// is projected onto the crossed face. Ties go to the lower face index.
pub fn detect_hit(domain: &PolyDomain, start: &[f64], end: &[f64]) -> Result<Option<Hit>, SimError> {
    let faces = domain.faces();
    let crossing = first_crossing(faces.len(), |k, x| faces[k].signed_distance(x), start, end)?;
    Ok(crossing.map(|(s, k)| hit_at(domain, start, end, s, k)))
}

pub(crate) fn hit_at(domain: &PolyDomain, start: &[f64], end: &[f64], s: f64, k: usize) -> Hit {
    let p: Vec<f64> = start
        .iter()
        .zip(end)
        .map(|(a, b)| a + s * (b - a))
        .collect();
    Hit {
        fraction: s,
        face: k,
        point: domain.face(k).project(&p),
    }
}

#[inline(always)]
fn first_crossing(
    n_faces: usize,
    dist: impl Fn(usize, &[f64]) -> f64,
    start: &[f64],
    end: &[f64],
) -> Result<Option<(f64, usize)>, SimError> {
    let mut best: Option<(f64, usize)> = None;
    for k in 0..n_faces {
        let g0 = dist(k, start);
        if !(g0 < 0.0) {
            return Err(SimError::StartOnBoundary { face: k });
        }
        let g1 = dist(k, end);
        if g1 >= 0.0 {
            let s = (g0 / (g0 - g1)).clamp(f64::MIN_POSITIVE, 1.0);
            if best.is_none_or(|(b, _)| s < b) {
                best = Some((s, k));
            }
        }
    }
    Ok(best)
}

/// Face normals and offsets of one domain in flat arrays, for the step loop.
pub(crate) struct FaceTable {
    dim: usize,
    normals: Vec<f64>,
    offsets: Vec<f64>,
}

impl FaceTable {
    pub fn new(domain: &PolyDomain) -> Self {
        Self {
            dim: domain.dim(),
            normals: domain.faces().iter().flat_map(|f| f.normal.iter().copied()).collect(),
            offsets: domain.faces().iter().map(|f| f.offset).collect(),
        }
    }

    #[inline(always)]
    fn distance(&self, k: usize, x: &[f64]) -> f64 {
        if self.dim == 1 {
            return self.normals[k] * x[0] - self.offsets[k];
        }
        let n = &self.normals[k * self.dim..(k + 1) * self.dim];
        n.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.offsets[k]
    }

    /// Same rule as [`detect_hit`], without building the hit point.
    #[inline]
    pub fn crossing(&self, start: &[f64], end: &[f64]) -> Result<Option<(f64, usize)>, SimError> {
        first_crossing(self.offsets.len(), |k, x| self.distance(k, x), start, end)
    }
}

pub(crate) fn select_edge(
    model: &HybridModel,
    mode: usize,
    face: usize,
    point: &[f64],
) -> Result<usize, SimError> {
    if let Some(e) = model.edge_for(mode, face, point) {
        return Ok(e);
    }
    let candidates = model.edges_on_face(mode, face);
    if candidates.is_empty() {
        return Err(SimError::CharacteristicFaceHit { mode, face });
    }
    // A point on a shared patch border: take the least violated patch.
    let violation = |e: usize| {
        model.edge(e)
            .source
            .patch
            .iter()
            .map(|h| h.signed_distance(point))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(candidates
        .iter()
        .copied()
        .min_by(|&a, &b| violation(a).total_cmp(&violation(b)))
        .expect("nonempty"))
}

/// Moves `y` inside every face it is within `eps` of.
pub(crate) fn nudge_inside(domain: &PolyDomain, y: &mut [f64], eps: f64) {
    for face in domain.faces() {
        let g = face.signed_distance(y);
        if g > -eps {
            let shift = g + eps;
            y.iter_mut().zip(&face.normal).for_each(|(v, n)| *v -= shift * n);
        }
    }
}

/// Applies the reset of the edge covering `point` on `(mode, face)`.
/// Returns the edge index and the post-jump location.
pub fn apply_reset(
    model: &HybridModel,
    mode: usize,
    face: usize,
    point: &[f64],
) -> Result<(usize, Location), SimError> {
    let e = select_edge(model, mode, face, point)?;
    let loc = match &model.edge(e).target {
        ResetTarget::Terminal(t) => Location::Terminal { terminal: *t },
        ResetTarget::Surface(map) => {
            let mut y = map.apply(point);
            let target = &model.mode(map.mode).domain;
            nudge_inside(target, &mut y, 1e-12 * target.scale());
            Location::Mode {
                mode: map.mode,
                position: y,
            }
        }
    };
    Ok((e, loc))
}

pub(crate) fn path_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

/// Draws an initial state from `law`; Gaussian laws are restricted to the
/// open mode domain by rejection.
pub fn sample_initial<R: rand::Rng>(
    model: &HybridModel,
    law: &InitialLaw,
    rng: &mut R,
) -> Result<PathState, SimError> {
    check_initial_law(model, law)?;
    match law {
        InitialLaw::Point { mode, position } => {
            Ok(PathState::in_mode(*mode, position.clone(), 0.0))
        }
        InitialLaw::Terminal { terminal } => Ok(PathState::terminal(*terminal, 0.0)),
        InitialLaw::Gaussian { mode, mean, std } => {
            let domain = &model.mode(*mode).domain;
            let mut x = vec![0.0; mean.len()];
            for _ in 0..1_000_000 {
                for (xi, m) in x.iter_mut().zip(mean) {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    *xi = m + std * z;
                }
                if domain.contains_strict(&x) {
                    return Ok(PathState::in_mode(*mode, x, 0.0));
                }
            }
            Err(SimError::InvalidArgument(
                "initial Gaussian has negligible mass inside its mode".into(),
            ))
        }
    }
}

/// Checks indices, dimensions and that point masses sit strictly inside.
pub fn check_initial_law(model: &HybridModel, law: &InitialLaw) -> Result<(), SimError> {
    let d = model.dim();
    let check_mode = |mode: usize| {
        if mode >= model.modes().len() {
            Err(SimError::Model(ModelError::UnknownMode(mode)))
        } else {
            Ok(())
        }
    };
    match law {
        InitialLaw::Point { mode, position } => {
            check_mode(*mode)?;
            if position.len() != d {
                return Err(SimError::InvalidArgument(format!(
                    "initial position must have length {d}"
                )));
            }
            let domain = &model.mode(*mode).domain;
            if !domain.contains_strict(position) {
                let face = domain
                    .faces()
                    .iter()
                    .position(|f| f.signed_distance(position) >= 0.0)
                    .unwrap_or(0);
                return Err(SimError::StartOnBoundary { face });
            }
            Ok(())
        }
        InitialLaw::Gaussian { mode, mean, std } => {
            check_mode(*mode)?;
            if mean.len() != d || !(*std > 0.0) {
                return Err(SimError::InvalidArgument(format!(
                    "Gaussian initial law needs a mean of length {d} and std > 0"
                )));
            }
            Ok(())
        }
        InitialLaw::Terminal { terminal } => {
            if *terminal >= model.terminal_states().len() {
                return Err(SimError::InvalidArgument(format!(
                    "unknown terminal index {terminal}"
                )));
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        build_model, constant_fields, mode_spec, EdgeSpec, HalfSpace, ModelSpec, ResetSource,
        TargetSpec,
    };

    fn half_line() -> PolyDomain {
        PolyDomain::new(1, vec![HalfSpace::new(vec![-1.0], 0.0).unwrap()]).unwrap()
    }

    fn interval_model(reset: TargetSpec) -> HybridModel {
        build_model(ModelSpec {
            dimension: 1,
            modes: vec![mode_spec(
                "u",
                PolyDomain::from_box(&[0.0], &[1.0]).unwrap().faces().to_vec(),
                constant_fields(vec![0.0], &[1.0]),
            )],
            terminal_states: vec!["out".into()],
            reset_edges: vec![
                EdgeSpec {
                    source: ResetSource::new(0, 0),
                    target: reset,
                },
                EdgeSpec {
                    source: ResetSource::new(0, 1),
                    target: TargetSpec::Terminal("out".into()),
                },
            ],
            characteristic_faces: vec![],
        })
        .unwrap()
    }

    #[test]
    fn interior_segment_has_no_hit() {
        assert_eq!(detect_hit(&half_line(), &[0.5], &[2.0]).unwrap(), None);
    }

    #[test]
    fn half_line_crossing_at_midpoint() {
        let hit = detect_hit(&half_line(), &[0.5], &[-0.5]).unwrap().unwrap();
        assert_eq!(hit.fraction, 0.5);
        assert_eq!(hit.face, 0);
        assert_eq!(hit.point, vec![0.0]);
    }

    #[test]
    fn start_on_boundary_is_an_error() {
        assert_eq!(
            detect_hit(&half_line(), &[0.0], &[1.0]).unwrap_err(),
            SimError::StartOnBoundary { face: 0 }
        );
    }

    #[test]
    fn zero_fields_leave_state_unchanged() {
        let model = build_model(ModelSpec {
            dimension: 1,
            modes: vec![mode_spec(
                "u",
                PolyDomain::from_box(&[0.0], &[1.0]).unwrap().faces().to_vec(),
                constant_fields(vec![0.0], &[0.0]),
            )],
            terminal_states: vec![],
            reset_edges: vec![],
            characteristic_faces: vec![(0, 0), (0, 1)],
        })
        .unwrap();
        let s = PathState::in_mode(0, vec![0.3], 0.0);
        let next = step(&model, &s, 0.1, &[1.7]).unwrap();
        assert_eq!(next.location, s.location);
        assert_eq!(next.time, 0.1);
    }

    #[test]
    fn terminal_reset_and_identity_nudge() {
        let model = interval_model(TargetSpec::translation(0, vec![0.5]));
        let (e, loc) = apply_reset(&model, 0, 1, &[1.0]).unwrap();
        assert_eq!(e, 1);
        assert_eq!(loc, Location::Terminal { terminal: 0 });
        let (e, loc) = apply_reset(&model, 0, 0, &[0.0]).unwrap();
        assert_eq!(e, 0);
        assert_eq!(
            loc,
            Location::Mode {
                mode: 0,
                position: vec![0.5]
            }
        );
    }

    #[test]
    fn nudge_moves_points_off_a_face() {
        let d = PolyDomain::from_box(&[0.0], &[1.0]).unwrap();
        let mut y = vec![1.0];
        nudge_inside(&d, &mut y, 1e-12);
        assert!(d.contains_strict(&y));
        assert!((1.0 - y[0] - 1e-12).abs() < 1e-15);
    }

    #[test]
    fn characteristic_face_hit_is_reported() {
        let model = build_model(ModelSpec {
            dimension: 1,
            modes: vec![mode_spec(
                "u",
                PolyDomain::from_box(&[0.0], &[1.0]).unwrap().faces().to_vec(),
                constant_fields(vec![1.0], &[0.0]),
            )],
            terminal_states: vec![],
            reset_edges: vec![],
            characteristic_faces: vec![(0, 0), (0, 1)],
        })
        .unwrap();
        assert_eq!(
            apply_reset(&model, 0, 1, &[1.0]).unwrap_err(),
            SimError::CharacteristicFaceHit { mode: 0, face: 1 }
        );
    }
}
