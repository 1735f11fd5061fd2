//! Python bindings: scenario and JSON-defined models, path ensembles, the
//! density solver and the config-driven runner.
//!
//! Structured values cross the boundary as plain dicts and lists through
//! Python's `json` module, in the same shapes the CLI config accepts.

use std::path::PathBuf;
use std::sync::Arc;

use fpk_reset::cli::{self, RunConfig};
use fpk_reset::fpk::{build_grid, DensityState, FluxScheme, FpkSolver, GridLayout};
use fpk_reset::model::{build_model, HybridModel, InitialLaw, ModelDocument};
use fpk_reset::scenarios::{
    self, BrownianResetParams, FirstExitParams, ThermostatParams, ZenoTrapParams,
};
use fpk_reset::simulate::{ensemble, SimConfig};
use fpk_reset::validate::mass_balance;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_error(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn extract_json<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_error)
}

fn to_python<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn params_or_default<T: DeserializeOwned + Default>(params: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    match params {
        Some(p) => extract_json(p),
        None => Ok(T::default()),
    }
}

/// A validated model: modes, reset edges and terminal states.
#[pyclass(frozen, module = "fpk_reset_py")]
struct Model {
    inner: Arc<HybridModel>,
    /// Initial law the scenario is usually run from, if any.
    default_initial: Option<InitialLaw>,
}

impl Model {
    fn wrap(model: HybridModel, initial: Option<InitialLaw>) -> Self {
        Self {
            inner: Arc::new(model),
            default_initial: initial,
        }
    }
}

#[pymethods]
impl Model {
    /// Two-mode thermostat. `params` takes the keys of the CLI
    /// `thermostat` scenario; missing keys keep the 1D fixture values.
    #[staticmethod]
    #[pyo3(signature = (params=None))]
    fn thermostat(params: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let p: ThermostatParams = params_or_default(params)?;
        let m = scenarios::thermostat_model(&p).map_err(value_error)?;
        Ok(Self::wrap(m, Some(scenarios::thermostat_initial(&p))))
    }

    /// Brownian motion on the half-line, absorbed at 0 into `hit`.
    #[staticmethod]
    #[pyo3(signature = (x0=1.0))]
    fn brownian_reset(x0: f64) -> PyResult<Self> {
        let m = scenarios::brownian_reset_model(&BrownianResetParams::new(x0)).map_err(value_error)?;
        Ok(Self::wrap(m, Some(point(vec![x0]))))
    }

    /// Brownian motion on `(lo, hi)` with terminals `left` and `right`.
    #[staticmethod]
    #[pyo3(signature = (lo=0.0, hi=1.0))]
    fn first_exit(lo: f64, hi: f64) -> PyResult<Self> {
        let p = FirstExitParams::interval(lo, hi).map_err(value_error)?;
        let m = scenarios::first_exit_model(&p).map_err(value_error)?;
        Ok(Self::wrap(m, None))
    }

    /// Strong drift into a reset face that maps back next to itself.
    #[staticmethod]
    #[pyo3(signature = (params=None))]
    fn zeno_trap(params: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let p: ZenoTrapParams = params_or_default(params)?;
        let m = scenarios::zeno_trap_model(&p).map_err(value_error)?;
        Ok(Self::wrap(m, Some(point(vec![0.5]))))
    }

    /// Model from a dict in the format of the CLI config's `model` key.
    #[staticmethod]
    fn from_dict(doc: &Bound<'_, PyAny>) -> PyResult<Self> {
        let doc: ModelDocument = extract_json(doc)?;
        let spec = doc.to_spec().map_err(value_error)?;
        Ok(Self::wrap(build_model(spec).map_err(value_error)?, None))
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn modes(&self) -> Vec<String> {
        self.inner.modes().iter().map(|m| m.name.clone()).collect()
    }

    #[getter]
    fn terminal_states(&self) -> Vec<String> {
        self.inner.terminal_states().to_vec()
    }

    /// Scenario initial law as a dict, or `None`.
    #[getter]
    fn default_initial<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.default_initial.as_ref().map(|l| to_python(py, l)).transpose()
    }

    /// `(drift, diffusion)` of the equivalent Itô equation at `point`;
    /// `diffusion` is the row-major `d×d` matrix `Σ A_r A_rᵀ`.
    fn ito_coefficients(&self, mode: usize, point: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        if mode >= self.inner.modes().len() {
            return Err(value_error(format!("no mode {mode}")));
        }
        if point.len() != self.inner.dim() {
            return Err(value_error(format!("point must have length {}", self.inner.dim())));
        }
        let c = self.inner.ito_coefficients(mode, &point);
        Ok((c.drift, c.diffusion))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(dimension={}, modes={:?}, terminal_states={:?})",
            self.inner.dim(),
            self.modes(),
            self.inner.terminal_states()
        )
    }
}

fn point(position: Vec<f64>) -> InitialLaw {
    InitialLaw::Point { mode: 0, position }
}

fn initial_law(model: &Model, initial: Option<&Bound<'_, PyAny>>) -> PyResult<InitialLaw> {
    match initial {
        Some(obj) => extract_json(obj),
        None => model
            .default_initial
            .clone()
            .ok_or_else(|| value_error("this model has no default initial law; pass `initial`")),
    }
}

/// Discretized law: per-mode cell averages and per-terminal masses.
#[pyclass(module = "fpk_reset_py")]
struct Density {
    state: DensityState,
    grid: Arc<GridLayout>,
}

#[pymethods]
impl Density {
    #[getter]
    fn time(&self) -> f64 {
        self.state.time
    }

    /// Cell averages (mass per volume), one list per mode.
    #[getter]
    fn modes(&self) -> Vec<Vec<f64>> {
        self.state.modes.clone()
    }

    #[getter]
    fn terminal(&self) -> Vec<f64> {
        self.state.terminal.clone()
    }

    /// `Σ p·vol + Σ q`.
    fn total_mass(&self) -> f64 {
        mass_balance(&self.grid, &self.state)
    }

    fn mode_mass(&self, mode: usize) -> PyResult<f64> {
        if mode >= self.grid.modes.len() {
            return Err(value_error(format!("no mode {mode}")));
        }
        Ok(self.state.mode_mass(&self.grid, mode))
    }

    /// Cell centres of `mode`, in the order of `modes[mode]`.
    fn cell_centers(&self, mode: usize) -> PyResult<Vec<Vec<f64>>> {
        let g = self
            .grid
            .modes
            .get(mode)
            .ok_or_else(|| value_error(format!("no mode {mode}")))?;
        Ok((0..g.n_cells()).map(|c| g.cell_center(c)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Density(time={}, terminal={:?})", self.state.time, self.state.terminal)
    }
}

/// Finite-volume solver for the density of a model on a uniform grid.
#[pyclass(frozen, module = "fpk_reset_py")]
struct Solver {
    model: Arc<HybridModel>,
    grid: Arc<GridLayout>,
    scheme: FluxScheme,
}

impl Solver {
    fn solver(&self) -> PyResult<FpkSolver<'_>> {
        FpkSolver::new(&self.model, (*self.grid).clone(), self.scheme).map_err(value_error)
    }

    fn check(&self, density: &Density) -> PyResult<()> {
        if !Arc::ptr_eq(&self.grid, &density.grid) {
            return Err(value_error("density belongs to a different solver"));
        }
        Ok(())
    }

    fn wrap(&self, state: DensityState) -> Density {
        Density {
            state,
            grid: Arc::clone(&self.grid),
        }
    }
}

#[pymethods]
impl Solver {
    /// `scheme` is `"exponential_fitting"` (default) or `"centered"`.
    #[new]
    #[pyo3(signature = (model, resolution, scheme="exponential_fitting"))]
    fn new(model: &Model, resolution: usize, scheme: &str) -> PyResult<Self> {
        let scheme: FluxScheme =
            serde_json::from_value(serde_json::Value::String(scheme.into())).map_err(value_error)?;
        let grid = build_grid(&model.inner, resolution).map_err(value_error)?;
        let s = Self {
            model: Arc::clone(&model.inner),
            grid: Arc::new(grid),
            scheme,
        };
        s.solver()?;
        Ok(s)
    }

    /// Largest explicit step the solver accepts.
    fn stability_bound(&self) -> PyResult<f64> {
        Ok(self.solver()?.stability_bound())
    }

    /// Density of `initial` (a dict such as `{"point": {"mode": 0,
    /// "position": [1.0]}}`) projected on the grid.
    #[pyo3(signature = (model, initial=None))]
    fn initial_state(&self, model: &Model, initial: Option<&Bound<'_, PyAny>>) -> PyResult<Density> {
        let law = initial_law(model, initial)?;
        Ok(self.wrap(self.solver()?.initial_state(&law).map_err(value_error)?))
    }

    /// Advance `density` in place by `steps` explicit steps of length `dt`.
    fn evolve(&self, py: Python<'_>, density: &mut Density, dt: f64, steps: usize) -> PyResult<()> {
        self.check(density)?;
        let mut solver = self.solver()?;
        py.detach(|| solver.evolve(&mut density.state, dt, steps)).map_err(runtime_error)
    }

    /// Advance `density` in place to time `t_end` with steps of at most
    /// `dt_max`.
    fn evolve_to(&self, py: Python<'_>, density: &mut Density, t_end: f64, dt_max: f64) -> PyResult<()> {
        self.check(density)?;
        let mut solver = self.solver()?;
        py.detach(|| solver.evolve_to(&mut density.state, t_end, dt_max)).map_err(runtime_error)
    }

    /// Stationary density by a direct solve (1D grids).
    fn stationary_state(&self, py: Python<'_>) -> PyResult<Density> {
        let mut solver = self.solver()?;
        let state = py.detach(|| solver.stationary_state()).map_err(runtime_error)?;
        Ok(self.wrap(state))
    }

    #[getter]
    fn cells_per_mode(&self) -> Vec<usize> {
        self.grid.modes.iter().map(|g| g.n_cells()).collect()
    }
}

/// Simulate `n` paths and return the empirical law at `output_times` as a
/// dict with `snapshots`, `zeno_count` and `ensemble_size`.
#[pyfunction]
#[pyo3(signature = (model, n, horizon, dt, output_times=None, initial=None, seed=0, zeno_cap=None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    model: &Model,
    n: usize,
    horizon: f64,
    dt: f64,
    output_times: Option<Vec<f64>>,
    initial: Option<&Bound<'py, PyAny>>,
    seed: u64,
    zeno_cap: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let law = initial_law(model, initial)?;
    let times = output_times.unwrap_or_else(|| vec![horizon]);
    let cfg = SimConfig {
        horizon,
        dt,
        zeno_cap,
    };
    let m = Arc::clone(&model.inner);
    let measure = py
        .detach(|| ensemble(&m, &law, n, &cfg, &times, seed))
        .map_err(value_error)?;
    to_python(py, &measure)
}

/// Run a CLI config given as a dict. Returns `{"files": [...],
/// "report": {...} | None, "exit_code": int}`.
#[pyfunction]
#[pyo3(signature = (config, validate=false))]
fn run_config<'py>(py: Python<'py>, config: &Bound<'py, PyAny>, validate: bool) -> PyResult<Bound<'py, PyAny>> {
    let text: String = py.import("json")?.call_method1("dumps", (config,))?.extract()?;
    let config: RunConfig = cli::parse_config(&text).map_err(value_error)?;
    let outcome = py
        .detach(|| if validate { cli::validate(&config) } else { cli::run(&config) })
        .map_err(runtime_error)?;
    #[derive(Serialize)]
    struct Out<'a> {
        files: &'a [PathBuf],
        report: &'a Option<fpk_reset::validate::ValidationReport>,
        exit_code: i32,
    }
    to_python(
        py,
        &Out {
            files: &outcome.files,
            report: &outcome.report,
            exit_code: outcome.exit_code(),
        },
    )
}

/// `P(τ ≤ t)` for Brownian motion from `x0 > 0` hitting 0.
#[pyfunction]
fn analytic_first_passage(x0: f64, t: f64) -> f64 {
    scenarios::analytic_first_passage(x0, t)
}

/// Probability that Brownian motion from `x0` leaves `(lo, hi)` at `lo`.
#[pyfunction]
fn exit_left_probability(x0: f64, lo: f64, hi: f64) -> f64 {
    scenarios::exit_left_probability(x0, lo, hi)
}

#[pymodule]
fn fpk_reset_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Density>()?;
    m.add_class::<Solver>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_first_passage, m)?)?;
    m.add_function(wrap_pyfunction!(exit_left_probability, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
