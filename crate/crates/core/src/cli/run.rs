//! Run orchestration: build the model, run the path ensemble and/or the
//! density solver, compare them and write the result files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ConfigError, IntervalExitParams, Method, RunConfig};
use crate::fpk::{build_grid, DensityState, FluxScheme, FpkError, FpkSolver, GridLayout};
use crate::model::{HybridModel, InitialLaw, ModelError};
use crate::scenarios::{
    brownian_reset_model, first_exit_model, thermostat_initial, thermostat_model, zeno_trap_model,
    BrownianResetParams, FirstExitParams, ThermostatParams, ZenoTrapParams,
};
use crate::simulate::{ensemble, EmpiricalMeasure, SimConfig, SimError};
use crate::validate::{compare_mc_pde, Metric, ValidationError, ValidationReport};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("density solver: {0}")]
    Fpk(#[from] FpkError),
    #[error("validation: {0}")]
    Validation(#[from] ValidationError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    Threads(String),
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub report: Option<ValidationReport>,
}

impl RunOutcome {
    /// 0 when every check passed (or none ran), 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match &self.report {
            Some(r) if !r.passed() => 2,
            _ => 0,
        }
    }
}

/// Model and initial law described by `config`.
pub fn prepare(config: &RunConfig) -> Result<(HybridModel, InitialLaw), RunError> {
    let (model, default_law) = match (&config.scenario, &config.model) {
        (_, Some(doc)) => (doc.build()?, None),
        (Some(name), None) => scenario(name, config.params.as_ref())?,
        (None, None) => unreachable!("validated config names a model"),
    };
    let law = config
        .initial
        .clone()
        .or(default_law)
        .expect("validated config has an initial law");
    Ok((model, law))
}

fn params<T>(p: Option<&serde_json::Value>) -> Result<T, ConfigError>
where
    T: Default + for<'de> serde::Deserialize<'de>,
{
    p.map_or_else(|| Ok(T::default()), |v| super::config::from_value(v, "params"))
}

fn scenario(
    name: &str,
    p: Option<&serde_json::Value>,
) -> Result<(HybridModel, Option<InitialLaw>), RunError> {
    let point = |x: Vec<f64>| InitialLaw::Point { mode: 0, position: x };
    Ok(match name {
        "thermostat" => {
            let tp: ThermostatParams = params(p)?;
            (thermostat_model(&tp)?, Some(thermostat_initial(&tp)))
        }
        "brownian_reset" => {
            let bp: BrownianResetParams = params(p)?;
            (brownian_reset_model(&bp)?, Some(point(vec![bp.x0])))
        }
        "first_exit" => {
            let ip: IntervalExitParams = params(p)?;
            let model = first_exit_model(&FirstExitParams::interval(ip.lo, ip.hi)?)?;
            (model, Some(point(vec![ip.x0])))
        }
        "zeno_trap" => {
            let zp: ZenoTrapParams = params(p)?;
            (zeno_trap_model(&zp)?, Some(point(vec![0.5])))
        }
        other => {
            return Err(ModelError::InvalidParameter(format!("unknown scenario `{other}`")).into());
        }
    })
}

/// Runs `config`, using a dedicated pool when `threads` is set.
pub fn run(config: &RunConfig) -> Result<RunOutcome, RunError> {
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| RunError::Threads(e.to_string()))?
            .install(|| run_inner(config)),
        None => run_inner(config),
    }
}

/// Like [`run`] but always runs and compares both methods.
pub fn validate(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let mut c = config.clone();
    c.method = Method::Both;
    run(&c)
}

/// Density snapshots at the output times.
#[derive(Debug, Serialize)]
pub struct PdeResult {
    pub grid: GridLayout,
    pub dt: f64,
    pub steps: u64,
    /// Largest `|total mass − 1|` over all steps.
    pub max_mass_defect: f64,
    pub snapshots: Vec<DensityState>,
}

pub fn solve_pde(model: &HybridModel, law: &InitialLaw, config: &RunConfig) -> Result<PdeResult, RunError> {
    let grid = build_grid(model, config.resolution)?;
    let mut solver = FpkSolver::new(model, grid.clone(), FluxScheme::default())?;
    let dt_max = config.pde_dt.unwrap_or_else(|| solver.stability_bound());
    let mut density = solver.initial_state(law)?;
    let mut defect = (density.total_mass(&grid) - 1.0).abs();
    let mut steps = 0u64;
    let mut snapshots = Vec::with_capacity(config.output_times.len());
    for &t in &config.output_times {
        let span = t - density.time;
        if span > 0.0 {
            let n = (span / dt_max).ceil().max(1.0) as usize;
            solver.evolve_with(&mut density, span / n as f64, n, |d| {
                defect = defect.max((d.total_mass(&grid) - 1.0).abs());
            })?;
            steps += n as u64;
        }
        density.time = t;
        snapshots.push(density.clone());
    }
    Ok(PdeResult {
        grid,
        dt: dt_max,
        steps,
        max_mass_defect: defect,
        snapshots,
    })
}

pub fn simulate_mc(model: &HybridModel, law: &InitialLaw, config: &RunConfig) -> Result<EmpiricalMeasure, RunError> {
    let sim = SimConfig {
        horizon: config.horizon,
        dt: config.dt,
        zeno_cap: config.zeno_cap,
    };
    Ok(ensemble(model, law, config.ensemble_size, &sim, &config.output_times, config.seed)?)
}

/// Compares the ensemble with the density solution at every output time.
pub fn compare(
    model: &HybridModel,
    config: &RunConfig,
    pde: &PdeResult,
    mc: &EmpiricalMeasure,
) -> Result<ValidationReport, RunError> {
    let tol = &config.tolerances;
    let n = mc.effective_size().max(1) as f64;
    let run = |m: Metric| m.with_run(Some(config.seed), Some(config.resolution), Some(config.dt));
    let mut report = ValidationReport::default();
    for (snap, density) in mc.snapshots.iter().zip(&pde.snapshots) {
        let t = snap.time;
        for (k, name) in model.terminal_states().iter().enumerate() {
            let q_hat = snap.terminal_counts[k] as f64 / n;
            let se = (q_hat * (1.0 - q_hat) / n).sqrt();
            let diff = (density.terminal[k] - q_hat).abs();
            report.push(run(Metric::at_most(
                &format!("terminal_mass[{name}]@{t}"),
                diff,
                tol.se_factor * se + tol.terminal_bias,
                "density solver terminal mass",
            )));
        }
        let dist = compare_mc_pde(&pde.grid, mc, density, t)?;
        let noise: f64 = pde
            .grid
            .modes
            .iter()
            .zip(&density.modes)
            .flat_map(|(g, p)| p.iter().map(move |v| (v * g.cell_volume).max(0.0)))
            .map(|m| (2.0 * m / (std::f64::consts::PI * n)).sqrt())
            .sum();
        report.push(run(Metric::at_most(
            &format!("density_l1@{t}"),
            dist.l1,
            tol.density_l1 + noise,
            "density solver cell averages; tolerance includes the expected sampling L1",
        )));
    }
    report.push(run(Metric::at_most(
        "mass_defect",
        pde.max_mass_defect,
        tol.mass,
        "unit total mass on every solver step",
    )));
    if mc.zeno_count > 0 {
        report.push(run(Metric::at_most(
            "zeno_fraction",
            mc.zeno_count as f64 / mc.ensemble_size as f64,
            0.0,
            "no path exhausts its reset budget",
        )));
    }
    Ok(report)
}

/// Decimal with 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<(), RunError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    files.push(path);
    Ok(())
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("results serialize");
    s.push('\n');
    s
}

pub fn pde_terminal_csv(model: &HybridModel, pde: &PdeResult) -> String {
    let mut s = String::from("time");
    for name in model.terminal_states() {
        s.push(',');
        s.push_str(name);
    }
    s.push_str(",mode_mass\n");
    for d in &pde.snapshots {
        s.push_str(&num(d.time));
        for q in &d.terminal {
            s.push(',');
            s.push_str(&num(*q));
        }
        let mass: f64 = (0..pde.grid.modes.len()).map(|m| d.mode_mass(&pde.grid, m)).sum();
        let _ = writeln!(s, ",{}", num(mass));
    }
    s
}

pub fn mc_terminal_csv(model: &HybridModel, mc: &EmpiricalMeasure) -> String {
    let mut s = String::from("time");
    for name in model.terminal_states() {
        s.push(',');
        s.push_str(name);
    }
    s.push_str(",paths,zeno_excluded\n");
    let n = mc.effective_size().max(1) as f64;
    for snap in &mc.snapshots {
        s.push_str(&num(snap.time));
        for &c in &snap.terminal_counts {
            s.push(',');
            s.push_str(&num(c as f64 / n));
        }
        let _ = writeln!(s, ",{},{}", mc.effective_size(), mc.zeno_count);
    }
    s
}

fn run_inner(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let (model, law) = prepare(config)?;
    let pde = if config.method.runs_pde() {
        Some(solve_pde(&model, &law, config)?)
    } else {
        None
    };
    let mc = if config.method.runs_mc() {
        Some(simulate_mc(&model, &law, config)?)
    } else {
        None
    };
    let report = match (&pde, &mc) {
        (Some(p), Some(m)) => Some(compare(&model, config, p, m)?),
        _ => None,
    };

    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut files = Vec::new();
    // The worker count does not affect results, so it is left out.
    let echoed = RunConfig {
        threads: None,
        ..config.clone()
    };
    write_file(dir, "config.json", &json(&echoed), &mut files)?;
    if let Some(p) = &pde {
        write_file(dir, "terminal_pde.csv", &pde_terminal_csv(&model, p), &mut files)?;
        write_file(dir, "density_pde.json", &json(p), &mut files)?;
    }
    if let Some(m) = &mc {
        write_file(dir, "terminal_mc.csv", &mc_terminal_csv(&model, m), &mut files)?;
        write_file(dir, "empirical.json", &json(m), &mut files)?;
    }
    if let Some(r) = &report {
        write_file(dir, "report.json", &json(r), &mut files)?;
    }
    Ok(RunOutcome { files, report })
}
