//! Path event loop shared by single trajectories, ensembles and path
//! functionals.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{hit_at, nudge_inside, FaceTable, path_rng, select_edge, JumpEvent, Location, PathState, SimError};
use crate::model::{HybridModel, ItoCoefficients, ResetTarget};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    /// Maximum number of resets; defaults to `ceil(1e4 · horizon)`.
    pub zeno_cap: Option<u64>,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64) -> Self {
        Self {
            horizon,
            dt,
            zeno_cap: None,
        }
    }

    pub fn effective_zeno_cap(&self) -> u64 {
        self.zeno_cap
            .unwrap_or_else(|| (1e4 * self.horizon).ceil().max(1.0) as u64)
    }

    pub(crate) fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimError::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(SimError::InvalidArgument(format!(
                "horizon must be nonnegative, got {}",
                self.horizon
            )));
        }
        if self.zeno_cap == Some(0) {
            return Err(SimError::InvalidArgument("zeno_cap must be at least 1".into()));
        }
        Ok(())
    }

    /// Sorted stop times: the requested times plus the horizon.
    pub(crate) fn stops(&self, times: &[f64]) -> Result<Vec<f64>, SimError> {
        let mut stops = Vec::with_capacity(times.len() + 1);
        for &t in times {
            if !(0.0..=self.horizon).contains(&t) {
                return Err(SimError::InvalidArgument(format!(
                    "output time {t} outside [0, {}]",
                    self.horizon
                )));
            }
            if stops.last().is_some_and(|&prev| t < prev) {
                return Err(SimError::InvalidArgument("output times must be sorted".into()));
            }
            stops.push(t);
        }
        if stops.last() != Some(&self.horizon) {
            stops.push(self.horizon);
        }
        Ok(stops)
    }
}

/// A reset as seen by observers. `image` is `Φ(pre)` before the interior
/// nudge (absent for terminal targets).
pub(crate) struct JumpView<'a> {
    pub time: f64,
    pub mode: usize,
    pub face: usize,
    pub edge: usize,
    pub pre: &'a [f64],
    pub image: Option<&'a [f64]>,
    pub post: &'a Location,
}

pub(crate) trait PathObserver {
    /// One straight piece of the path inside `mode`, from `(t0, x0)` to `(t1, x1)`.
    #[inline]
    fn segment(&mut self, _mode: usize, _x0: &[f64], _x1: &[f64], _t0: f64, _t1: f64) {}
    #[inline]
    fn jump(&mut self, _jump: &JumpView<'_>) {}
    /// State at stop `k`.
    fn stop(&mut self, k: usize, location: &Location);
}

pub(crate) struct PathOutcome {
    pub zeno: bool,
}

enum ModeKernel {
    /// `θ' = θ + (Bθ + c) dt + Σ_r (M_r θ + v_r) ξ_r`.
    Affine {
        b: Vec<f64>,
        c: Vec<f64>,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        constant_noise: bool,
    },
    General,
}

/// Per-mode step kernels with preallocated scratch space.
pub(crate) struct Stepper<'m> {
    model: &'m HybridModel,
    kernels: Vec<ModeKernel>,
    faces: Vec<FaceTable>,
    coeffs: ItoCoefficients,
    scratch: Vec<f64>,
    col: Vec<f64>,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m HybridModel) -> Self {
        let d = model.dim();
        let kernels = model
            .modes()
            .iter()
            .map(|mode| match mode.fields.affine_parts() {
                Some((drift, diffusion)) => {
                    let mut b = drift.matrix().to_vec();
                    let mut c = drift.offset().to_vec();
                    for f in &diffusion {
                        let m = f.matrix();
                        let v = f.offset();
                        for i in 0..d {
                            for j in 0..d {
                                let mm: f64 = (0..d).map(|k| m[i * d + k] * m[k * d + j]).sum();
                                b[i * d + j] += 0.5 * mm;
                            }
                            c[i] += 0.5 * (0..d).map(|k| m[i * d + k] * v[k]).sum::<f64>();
                        }
                    }
                    ModeKernel::Affine {
                        b,
                        c,
                        constant_noise: diffusion.iter().all(|f| f.matrix().iter().all(|&x| x == 0.0)),
                        m: diffusion.iter().map(|f| f.matrix().to_vec()).collect(),
                        v: diffusion.iter().map(|f| f.offset().to_vec()).collect(),
                    }
                }
                None => ModeKernel::General,
            })
            .collect();
        Self {
            model,
            kernels,
            faces: model.modes().iter().map(|m| FaceTable::new(&m.domain)).collect(),
            coeffs: ItoCoefficients {
                drift: vec![0.0; d],
                diffusion: vec![0.0; d * d],
            },
            scratch: vec![0.0; d + d * d],
            col: vec![0.0; d],
        }
    }

    #[inline]
    pub fn advance(&mut self, mode: usize, x: &[f64], h: f64, xi: &[f64], out: &mut [f64]) {
        let d = x.len();
        match &self.kernels[mode] {
            ModeKernel::Affine {
                b,
                c,
                m,
                v,
                constant_noise,
            } => {
                if d == 1 && *constant_noise && xi.len() == 1 {
                    out[0] = x[0] + (c[0] + b[0] * x[0]) * h + v[0][0] * xi[0];
                    return;
                }
                for i in 0..d {
                    let mut drift = c[i];
                    for j in 0..d {
                        drift += b[i * d + j] * x[j];
                    }
                    let mut noise = 0.0;
                    for r in 0..xi.len() {
                        let mut col = v[r][i];
                        if !constant_noise {
                            for j in 0..d {
                                col += m[r][i * d + j] * x[j];
                            }
                        }
                        noise += col * xi[r];
                    }
                    out[i] = x[i] + drift * h + noise;
                }
            }
            ModeKernel::General => {
                self.model
                    .ito_coefficients_into(mode, x, &mut self.coeffs, &mut self.scratch);
                for i in 0..d {
                    out[i] = x[i] + self.coeffs.drift[i] * h;
                }
                for (field, &z) in self.model.mode(mode).fields.diffusion.iter().zip(xi) {
                    field.eval(x, &mut self.col);
                    for i in 0..d {
                        out[i] += self.col[i] * z;
                    }
                }
            }
        }
    }
}

/// Runs one path from `initial` through all `stops`, reporting to `obs`.
pub(crate) fn run_path<O: PathObserver, R: Rng>(
    stepper: &mut Stepper<'_>,
    initial: &PathState,
    cfg: &SimConfig,
    zeno_cap: u64,
    stops: &[f64],
    rng: &mut R,
    obs: &mut O,
) -> Result<PathOutcome, SimError> {
    let model = stepper.model;
    let d = model.dim();
    let mut t = initial.time;
    let mut loc = initial.location.clone();
    let mut k = 0;
    let mut jumps = 0u64;
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut mode = usize::MAX;
    if let Location::Mode { mode: q, position } = &loc {
        mode = *q;
        x.copy_from_slice(position);
    }

    macro_rules! record_stops {
        () => {
            while k < stops.len() && stops[k] <= t {
                if mode != usize::MAX {
                    loc = Location::Mode {
                        mode,
                        position: x.clone(),
                    };
                }
                obs.stop(k, &loc);
                k += 1;
            }
        };
    }
    record_stops!();

    while k < stops.len() {
        if mode == usize::MAX {
            // Terminal: constant from here on.
            while k < stops.len() {
                obs.stop(k, &loc);
                k += 1;
            }
            break;
        }
        let target = stops[k];
        let remaining = target - t;
        let (h, t_next) = if remaining <= cfg.dt * (1.0 + 1e-9) {
            (remaining, target)
        } else {
            (cfg.dt, t + cfg.dt)
        };
        let sqrt_h = h.sqrt();
        for z in xi.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *z = sqrt_h * n;
        }
        stepper.advance(mode, &x, h, &xi, &mut y);
        let crossing = stepper.faces[mode].crossing(&x, &y)?;
        match crossing.map(|(s, face)| hit_at(&model.mode(mode).domain, &x, &y, s, face)) {
            None => {
                obs.segment(mode, &x, &y, t, t_next);
                std::mem::swap(&mut x, &mut y);
                t = t_next;
            }
            Some(hit) => {
                let t_hit = if hit.fraction >= 1.0 {
                    t_next
                } else {
                    t + hit.fraction * h
                };
                obs.segment(mode, &x, &hit.point, t, t_hit);
                let e = select_edge(model, mode, hit.face, &hit.point)?;
                match &model.edge(e).target {
                    ResetTarget::Terminal(term) => {
                        let post = Location::Terminal { terminal: *term };
                        obs.jump(&JumpView {
                            time: t_hit,
                            mode,
                            face: hit.face,
                            edge: e,
                            pre: &hit.point,
                            image: None,
                            post: &post,
                        });
                        loc = post;
                        mode = usize::MAX;
                    }
                    ResetTarget::Surface(map) => {
                        if jumps >= zeno_cap {
                            return Ok(PathOutcome { zeno: true });
                        }
                        jumps += 1;
                        let image = map.apply(&hit.point);
                        let target_domain = &model.mode(map.mode).domain;
                        let mut nudged = image.clone();
                        nudge_inside(target_domain, &mut nudged, 1e-12 * target_domain.scale());
                        let post = Location::Mode {
                            mode: map.mode,
                            position: nudged,
                        };
                        obs.jump(&JumpView {
                            time: t_hit,
                            mode,
                            face: hit.face,
                            edge: e,
                            pre: &hit.point,
                            image: Some(&image),
                            post: &post,
                        });
                        if let Location::Mode { position, .. } = &post {
                            x.copy_from_slice(position);
                        }
                        mode = map.mode;
                        loc = post;
                    }
                }
                t = t_hit;
            }
        }
        record_stops!();
    }
    Ok(PathOutcome { zeno: false })
}

/// A single sample path with its states at the requested sample times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub sample_times: Vec<f64>,
    /// State at each sample time reached before a Zeno truncation.
    pub samples: Vec<Location>,
    /// Surface resets in time order.
    pub jumps: Vec<JumpEvent>,
    /// Terminal absorption, if any.
    pub absorption: Option<JumpEvent>,
    pub zeno_flag: bool,
}

struct TrajectoryRecorder {
    samples: Vec<Location>,
    jumps: Vec<JumpEvent>,
    absorption: Option<JumpEvent>,
}

impl PathObserver for TrajectoryRecorder {
    fn jump(&mut self, j: &JumpView<'_>) {
        let ev = JumpEvent {
            time: j.time,
            mode: j.mode,
            face: j.face,
            edge: j.edge,
            pre: j.pre.to_vec(),
            post: j.post.clone(),
        };
        if j.image.is_some() {
            self.jumps.push(ev);
        } else {
            self.absorption = Some(ev);
        }
    }

    fn stop(&mut self, _k: usize, location: &Location) {
        self.samples.push(location.clone());
    }
}

/// Simulates one path up to `cfg.horizon` using the random stream `seed`.
/// `sample_times` are sorted times in `[0, horizon]`; the horizon is always
/// sampled.
pub fn simulate_path(
    model: &HybridModel,
    initial: &PathState,
    cfg: &SimConfig,
    sample_times: &[f64],
    seed: u64,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let stops = cfg.stops(sample_times)?;
    if let Location::Mode { mode, position } = &initial.location {
        let domain = &model.mode(*mode).domain;
        if let Some(face) = domain
            .faces()
            .iter()
            .position(|f| !(f.signed_distance(position) < 0.0))
        {
            return Err(SimError::StartOnBoundary { face });
        }
    }
    let mut stepper = Stepper::new(model);
    let mut rec = TrajectoryRecorder {
        samples: Vec::with_capacity(stops.len()),
        jumps: Vec::new(),
        absorption: None,
    };
    let mut rng = path_rng(seed, 0);
    let outcome = run_path(
        &mut stepper,
        initial,
        cfg,
        cfg.effective_zeno_cap(),
        &stops,
        &mut rng,
        &mut rec,
    )?;
    Ok(Trajectory {
        sample_times: stops,
        samples: rec.samples,
        jumps: rec.jumps,
        absorption: rec.absorption,
        zeno_flag: outcome.zeno,
    })
}
