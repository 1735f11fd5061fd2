//! Independent-path ensembles and their empirical measures.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{run_path, JumpView, PathObserver, SimConfig, Stepper};
use super::{check_initial_law, path_rng, sample_initial, Location, SimError};
use crate::model::{HybridModel, InitialLaw};

/// Positions of the paths sitting in one mode, flattened `d` per point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeCloud {
    pub positions: Vec<f64>,
}

impl ModeCloud {
    pub fn count(&self, dim: usize) -> usize {
        self.positions.len() / dim
    }

    pub fn points(&self, dim: usize) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(dim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub modes: Vec<ModeCloud>,
    pub terminal_counts: Vec<u64>,
}

/// Per-path Dynkin terms for the non-Zeno paths, indexed `[time][path]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathIntegrals {
    /// `φ(X_0)` per path.
    pub initial: Vec<f64>,
    /// `φ(X_t)`.
    pub value: Vec<Vec<f64>>,
    /// `∫_0^t Lφ(X_s) ds` by the trapezoid rule over simulation steps.
    pub generator_integral: Vec<Vec<f64>>,
    /// `Σ_{τ_j ≤ t} (φ∘Φ − φ)(X⁻_{τ_j})` over all resets.
    pub jump_sum: Vec<Vec<f64>>,
    /// Same sum restricted to resets onto a surface.
    pub surface_jump_sum: Vec<Vec<f64>>,
}

/// Empirical law of an ensemble at the requested output times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub dim: usize,
    pub ensemble_size: usize,
    /// Paths truncated by the Zeno guard; excluded from every snapshot.
    pub zeno_count: usize,
    pub snapshots: Vec<Snapshot>,
    pub path_integrals: Option<PathIntegrals>,
}

impl EmpiricalMeasure {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    /// Paths contributing to each snapshot.
    pub fn effective_size(&self) -> usize {
        self.ensemble_size - self.zeno_count
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.time == t)
    }
}

/// Test function evaluated along paths.
pub trait PathFunctional: Sync {
    /// `φ` at a mode point or a terminal state.
    fn value(&self, location: &Location) -> f64;

    /// `Lφ(q, θ)`.
    fn generator(&self, mode: usize, x: &[f64]) -> f64;

    /// `φ(q, θ)`; override to avoid building a [`Location`].
    fn value_at(&self, mode: usize, x: &[f64]) -> f64 {
        self.value(&Location::Mode {
            mode,
            position: x.to_vec(),
        })
    }
}

struct PathRecord {
    zeno: bool,
    stops: Vec<Location>,
    functional: Vec<[f64; 4]>,
    initial: f64,
}

struct CloudObserver<'a> {
    stops: Vec<Location>,
    n_out: usize,
    functional: Option<&'a dyn PathFunctional>,
    integral: f64,
    jump_sum: f64,
    surface_jump_sum: f64,
    cached: Option<f64>,
    records: Vec<[f64; 4]>,
}

impl PathObserver for CloudObserver<'_> {
    fn segment(&mut self, mode: usize, x0: &[f64], x1: &[f64], t0: f64, t1: f64) {
        if let Some(f) = self.functional {
            let l0 = match self.cached {
                Some(v) => v,
                None => f.generator(mode, x0),
            };
            let l1 = f.generator(mode, x1);
            self.integral += 0.5 * (l0 + l1) * (t1 - t0);
            self.cached = Some(l1);
        }
    }

    fn jump(&mut self, j: &JumpView<'_>) {
        self.cached = None;
        if let Some(f) = self.functional {
            let before = f.value_at(j.mode, j.pre);
            let after = match (j.image, j.post) {
                (Some(image), Location::Mode { mode, .. }) => f.value_at(*mode, image),
                _ => f.value(j.post),
            };
            let delta = after - before;
            self.jump_sum += delta;
            if j.image.is_some() {
                self.surface_jump_sum += delta;
            }
        }
    }

    fn stop(&mut self, k: usize, location: &Location) {
        if k >= self.n_out {
            return;
        }
        self.stops.push(location.clone());
        if let Some(f) = self.functional {
            self.records.push([
                f.value(location),
                self.integral,
                self.jump_sum,
                self.surface_jump_sum,
            ]);
        }
    }
}

fn run_ensemble(
    model: &HybridModel,
    law: &InitialLaw,
    n: usize,
    cfg: &SimConfig,
    output_times: &[f64],
    base_seed: u64,
    functional: Option<&dyn PathFunctional>,
) -> Result<EmpiricalMeasure, SimError> {
    cfg.validate()?;
    check_initial_law(model, law)?;
    let stops = cfg.stops(output_times)?;
    let n_out = output_times.len();
    let cap = cfg.effective_zeno_cap();
    let records = (0..n)
        .into_par_iter()
        .map_init(
            || Stepper::new(model),
            |stepper, i| -> Result<PathRecord, SimError> {
                let mut rng = path_rng(base_seed, i as u64);
                let initial = sample_initial(model, law, &mut rng)?;
                let mut obs = CloudObserver {
                    stops: Vec::with_capacity(n_out),
                    n_out,
                    functional,
                    integral: 0.0,
                    jump_sum: 0.0,
                    surface_jump_sum: 0.0,
                    cached: None,
                    records: Vec::new(),
                };
                let phi0 = functional.map_or(0.0, |f| f.value(&initial.location));
                let outcome = run_path(stepper, &initial, cfg, cap, &stops, &mut rng, &mut obs)?;
                Ok(PathRecord {
                    zeno: outcome.zeno,
                    stops: obs.stops,
                    functional: obs.records,
                    initial: phi0,
                })
            },
        )
        .collect::<Result<Vec<_>, _>>()?;

    let d = model.dim();
    let mut snapshots: Vec<Snapshot> = output_times
        .iter()
        .map(|&time| Snapshot {
            time,
            modes: vec![ModeCloud::default(); model.modes().len()],
            terminal_counts: vec![0; model.terminal_states().len()],
        })
        .collect();
    let mut integrals = functional.map(|_| PathIntegrals {
        initial: Vec::new(),
        value: vec![Vec::new(); n_out],
        generator_integral: vec![Vec::new(); n_out],
        jump_sum: vec![Vec::new(); n_out],
        surface_jump_sum: vec![Vec::new(); n_out],
    });
    let mut zeno_count = 0;
    for rec in records {
        if rec.zeno {
            zeno_count += 1;
            continue;
        }
        for (snap, loc) in snapshots.iter_mut().zip(&rec.stops) {
            match loc {
                Location::Mode { mode, position } => {
                    snap.modes[*mode].positions.extend_from_slice(position)
                }
                Location::Terminal { terminal } => snap.terminal_counts[*terminal] += 1,
            }
        }
        if let Some(pi) = integrals.as_mut() {
            pi.initial.push(rec.initial);
            for (k, r) in rec.functional.iter().enumerate() {
                pi.value[k].push(r[0]);
                pi.generator_integral[k].push(r[1]);
                pi.jump_sum[k].push(r[2]);
                pi.surface_jump_sum[k].push(r[3]);
            }
        }
    }
    debug_assert!(snapshots.iter().all(|s| s
        .modes
        .iter()
        .map(|m| m.count(d))
        .sum::<usize>()
        + s.terminal_counts.iter().sum::<u64>() as usize
        + zeno_count
        == n));
    Ok(EmpiricalMeasure {
        dim: d,
        ensemble_size: n,
        zeno_count,
        snapshots,
        path_integrals: integrals,
    })
}

/// Simulates `n` independent paths. Path `i` uses stream `i` of a ChaCha8
/// generator seeded with `base_seed`, so the result does not depend on the
/// number of worker threads.
pub fn ensemble(
    model: &HybridModel,
    law: &InitialLaw,
    n: usize,
    cfg: &SimConfig,
    output_times: &[f64],
    base_seed: u64,
) -> Result<EmpiricalMeasure, SimError> {
    run_ensemble(model, law, n, cfg, output_times, base_seed, None)
}

/// Like [`ensemble`], additionally recording the Dynkin terms of `functional`.
pub fn ensemble_with_functional(
    model: &HybridModel,
    law: &InitialLaw,
    n: usize,
    cfg: &SimConfig,
    output_times: &[f64],
    base_seed: u64,
    functional: &dyn PathFunctional,
) -> Result<EmpiricalMeasure, SimError> {
    run_ensemble(model, law, n, cfg, output_times, base_seed, Some(functional))
}
