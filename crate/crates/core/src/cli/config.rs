//! Run configuration: a single JSON document naming a scenario (or carrying
//! an inline model), the methods to run and their numerical parameters.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::model::{InitialLaw, ModelDocument};
use crate::scenarios::{BrownianResetParams, ThermostatParams, ZenoTrapParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mc,
    Pde,
    Both,
}

impl Method {
    pub fn runs_mc(self) -> bool {
        matches!(self, Method::Mc | Method::Both)
    }

    pub fn runs_pde(self) -> bool {
        matches!(self, Method::Pde | Method::Both)
    }
}

/// Allowances used by the report that compares the two methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Multiple of the binomial standard error allowed on terminal masses.
    pub se_factor: f64,
    /// Added to the terminal-mass tolerance for the discrete hit bias.
    pub terminal_bias: f64,
    /// Added to the expected sampling L1 of the histogram.
    pub density_l1: f64,
    /// Largest `|total mass − 1|` over all solver steps.
    pub mass: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            se_factor: 3.0,
            terminal_bias: 2e-2,
            density_l1: 5e-2,
            mass: 1e-8,
        }
    }
}

/// Gambler's-ruin interval for the `first_exit` scenario: Brownian motion on
/// `(lo, hi)` started at `x0`, with exits `left` and `right`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntervalExitParams {
    pub lo: f64,
    pub hi: f64,
    pub x0: f64,
}

impl Default for IntervalExitParams {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 1.0,
            x0: 0.3,
        }
    }
}

pub const SCENARIOS: [&str; 4] = ["thermostat", "brownian_reset", "first_exit", "zeno_trap"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    /// Scenario parameters; missing keys keep the scenario defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelDocument>,
    /// Required with `model`; overrides the scenario's initial law otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialLaw>,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Cells per axis in every mode.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Monte Carlo step.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Density solver step; defaults to the stability bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde_dt: Option<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Defaults to `[horizon]`.
    #[serde(default)]
    pub output_times: Vec<f64>,
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeno_cap: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_method() -> Method {
    Method::Both
}
fn default_resolution() -> usize {
    200
}
fn default_dt() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    1.0
}
fn default_ensemble_size() -> usize {
    10_000
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Top-level keys with their type, default and meaning; drives `schema` and
/// the key suggestions.
const FIELDS: [(&str, &str, &str, &str); 16] = [
    ("scenario", "string", "none", "one of thermostat, brownian_reset, first_exit, zeno_trap"),
    ("params", "object", "scenario defaults", "scenario parameters"),
    ("model", "object", "none", "inline model: dimension, modes, terminal_states, reset_edges"),
    ("initial", "object", "scenario default", "initial law: point, gaussian or terminal"),
    ("method", "string", "both", "mc, pde or both"),
    ("resolution", "integer", "200", "cells per axis in every mode"),
    ("dt", "number", "0.001", "Monte Carlo time step"),
    ("pde_dt", "number", "stability bound", "density solver time step"),
    ("horizon", "number", "1.0", "final time"),
    ("output_times", "array", "[horizon]", "sorted times in [0, horizon]"),
    ("ensemble_size", "integer", "10000", "number of paths"),
    ("seed", "integer", "0", "base seed; path i uses stream i"),
    ("zeno_cap", "integer", "ceil(1e4 * horizon)", "reset budget per path"),
    ("output_dir", "string", "out", "directory for result files"),
    ("threads", "integer", "all cores", "worker threads"),
    ("tolerances", "object", "see below", "allowances for the method comparison"),
];

/// Common misnamings that string similarity does not catch.
const ALIASES: [(&str, &str); 12] = [
    ("dx", "resolution"),
    ("cells", "resolution"),
    ("grid", "resolution"),
    ("n", "ensemble_size"),
    ("paths", "ensemble_size"),
    ("samples", "ensemble_size"),
    ("t_end", "horizon"),
    ("t", "horizon"),
    ("times", "output_times"),
    ("out", "output_dir"),
    ("output", "output_dir"),
    ("workers", "threads"),
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Schema(SchemaError),
}

/// A well-formed document with an invalid or unknown key.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    /// Dotted path of the offending key.
    pub key: String,
    pub message: String,
    pub suggestion: Option<String>,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid key `{}`: {}", self.key, self.message)?;
        if let Some(s) = &self.suggestion {
            write!(f, " (did you mean `{s}`?)")?;
        }
        Ok(())
    }
}

impl SchemaError {
    fn new(key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Schema(SchemaError {
            key: key.to_string(),
            message: message.into(),
            suggestion: None,
        })
    }
}

/// Closest known key to `key`, if any is close enough.
pub fn suggest_key(key: &str, known: &[&str]) -> Option<String> {
    if let Some((_, to)) = ALIASES.iter().find(|(from, _)| from.eq_ignore_ascii_case(key)) {
        if known.contains(to) {
            return Some(to.to_string());
        }
    }
    known
        .iter()
        .map(|k| (strsim::jaro_winkler(key, k), *k))
        .filter(|(s, _)| *s >= 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k.to_string())
}

/// Names between backticks after "expected" in a serde message.
fn expected_keys(message: &str) -> Vec<&str> {
    let Some(rest) = message.split_once("expected").map(|(_, r)| r) else {
        return Vec::new();
    };
    rest.split('`').skip(1).step_by(2).collect()
}

fn unknown_name(message: &str) -> Option<&str> {
    let rest = message
        .strip_prefix("unknown field `")
        .or_else(|| message.strip_prefix("unknown variant `"))?;
    rest.split('`').next()
}

fn join_key(path: &str, key: &str) -> String {
    if path.is_empty() || path == "." {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// Deserializes `T` from `value`, mapping failures to a [`SchemaError`]
/// under `prefix`.
pub(crate) fn from_value<T: for<'de> Deserialize<'de>>(value: &Value, prefix: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        schema_from_message(&join_key(prefix, &path), &inner)
    })
}

fn schema_from_message(path: &str, message: &str) -> ConfigError {
    // Path rendering uses "." for the root.
    let path = if path == "." { "" } else { path };
    if let Some(name) = unknown_name(message) {
        let known = expected_keys(message);
        let is_field = message.starts_with("unknown field");
        // The path already ends with the unknown key.
        let key = path.to_string();
        return ConfigError::Schema(SchemaError {
            key,
            message: if is_field {
                "unknown key".into()
            } else {
                format!("unknown value `{name}`")
            },
            suggestion: suggest_key(name, &known),
        });
    }
    let key = if path.is_empty() {
        message
            .strip_prefix("missing field `")
            .and_then(|r| r.split('`').next())
            .unwrap_or("")
            .to_string()
    } else {
        path.to_string()
    };
    ConfigError::Schema(SchemaError {
        key,
        message: message.to_string(),
        suggestion: None,
    })
}

/// Parses a configuration document, fills defaults and checks it.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut config: RunConfig = from_value(&value, "")?;
    config.normalize();
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Command-line overrides applied after loading.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub resolution: Option<usize>,
    pub dt: Option<f64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Minimal configuration for a named scenario, defaults everywhere else.
    pub fn for_scenario(name: &str) -> Self {
        let mut config: RunConfig =
            serde_json::from_value(json!({ "scenario": name })).expect("defaults deserialize");
        config.normalize();
        config
    }

    fn normalize(&mut self) {
        if self.output_times.is_empty() {
            self.output_times = vec![self.horizon];
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.resolution {
            self.resolution = r;
        }
        if let Some(dt) = o.dt {
            self.dt = dt;
        }
        if let Some(t) = o.threads {
            self.threads = Some(t);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.scenario, &self.model) {
            (None, None) => return Err(SchemaError::new("scenario", "either `scenario` or `model` is required")),
            (Some(_), Some(_)) => {
                return Err(SchemaError::new("model", "`scenario` and `model` are mutually exclusive"))
            }
            _ => {}
        }
        if let Some(name) = &self.scenario {
            if !SCENARIOS.contains(&name.as_str()) {
                return Err(ConfigError::Schema(SchemaError {
                    key: "scenario".into(),
                    message: format!("unknown scenario `{name}`"),
                    suggestion: suggest_key(name, &SCENARIOS),
                }));
            }
            if let Some(p) = &self.params {
                self.check_params(name, p)?;
            }
        } else {
            if self.params.is_some() {
                return Err(SchemaError::new("params", "`params` applies to named scenarios only"));
            }
            if self.initial.is_none() {
                return Err(SchemaError::new("initial", "an inline model needs an initial law"));
            }
        }
        positive("dt", self.dt)?;
        if let Some(h) = self.pde_dt {
            positive("pde_dt", h)?;
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(SchemaError::new("horizon", format!("must be a finite nonnegative number, got {}", self.horizon)));
        }
        if self.resolution == 0 {
            return Err(SchemaError::new("resolution", "must be at least 1"));
        }
        for (i, &t) in self.output_times.iter().enumerate() {
            if !(0.0..=self.horizon).contains(&t) {
                return Err(SchemaError::new(
                    "output_times",
                    format!("time {t} lies outside [0, {}]", self.horizon),
                ));
            }
            if i > 0 && t < self.output_times[i - 1] {
                return Err(SchemaError::new("output_times", "times must be sorted"));
            }
        }
        if self.method.runs_mc() && self.ensemble_size == 0 {
            return Err(SchemaError::new("ensemble_size", "must be at least 1 when Monte Carlo runs"));
        }
        if self.zeno_cap == Some(0) {
            return Err(SchemaError::new("zeno_cap", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(SchemaError::new("threads", "must be at least 1"));
        }
        let t = &self.tolerances;
        for (k, v) in [
            ("se_factor", t.se_factor),
            ("terminal_bias", t.terminal_bias),
            ("density_l1", t.density_l1),
            ("mass", t.mass),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SchemaError::new(&format!("tolerances.{k}"), "must be a finite nonnegative number"));
            }
        }
        Ok(())
    }

    fn check_params(&self, name: &str, p: &Value) -> Result<(), ConfigError> {
        match name {
            "thermostat" => from_value::<ThermostatParams>(p, "params").map(drop),
            "brownian_reset" => from_value::<BrownianResetParams>(p, "params").map(drop),
            "first_exit" => from_value::<IntervalExitParams>(p, "params").map(drop),
            _ => from_value::<ZenoTrapParams>(p, "params").map(drop),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SchemaError::new(key, format!("must be a positive finite number, got {v}")))
    }
}

/// Description of the configuration format printed by `schema`.
pub fn schema() -> Value {
    let fields: Vec<Value> = FIELDS
        .iter()
        .map(|(name, ty, default, about)| json!({ "key": name, "type": ty, "default": default, "description": about }))
        .collect();
    json!({
        "format": "JSON object; unknown keys are rejected",
        "keys": fields,
        "tolerances": Tolerances::default(),
        "scenarios": {
            "thermostat": ThermostatParams::default(),
            "brownian_reset": BrownianResetParams::default(),
            "first_exit": IntervalExitParams::default(),
            "zeno_trap": ZenoTrapParams::default(),
        },
        "initial": [
            { "point": { "mode": 0, "position": [0.0] } },
            { "gaussian": { "mode": 0, "mean": [0.0], "std": 0.1 } },
            { "terminal": { "terminal": 0 } },
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known_keys() -> Vec<&'static str> {
        FIELDS.iter().map(|f| f.0).collect()
    }

    fn schema_err(text: &str) -> SchemaError {
        match parse_config(text) {
            Err(ConfigError::Schema(e)) => e,
            other => panic!("expected a schema error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(r#"{"scenario": "brownian_reset"}"#).unwrap();
        assert_eq!(c.method, Method::Both);
        assert_eq!(c.resolution, 200);
        assert_eq!(c.dt, 1e-3);
        assert_eq!(c.horizon, 1.0);
        assert_eq!(c.output_times, vec![1.0]);
        assert_eq!(c.ensemble_size, 10_000);
        assert_eq!(c.seed, 0);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert_eq!(c.tolerances, Tolerances::default());
        assert_eq!(c, RunConfig::for_scenario("brownian_reset"));
    }

    #[test]
    fn negative_dt_names_the_key() {
        let e = schema_err(r#"{"scenario": "brownian_reset", "dt": -0.1}"#);
        assert_eq!(e.key, "dt");
    }

    #[test]
    fn dx_suggests_resolution() {
        let e = schema_err(r#"{"scenario": "brownian_reset", "dx": 0.01}"#);
        assert_eq!(e.key, "dx");
        assert_eq!(e.suggestion.as_deref(), Some("resolution"));
    }

    #[test]
    fn misspelled_key_suggests_the_nearest() {
        let e = schema_err(r#"{"scenario": "thermostat", "horizn": 2}"#);
        assert_eq!(e.suggestion.as_deref(), Some("horizon"));
    }

    #[test]
    fn wrong_type_names_the_key() {
        let e = schema_err(r#"{"scenario": "thermostat", "seed": "abc"}"#);
        assert_eq!(e.key, "seed");
    }

    #[test]
    fn nested_keys_carry_their_path() {
        let e = schema_err(r#"{"scenario": "thermostat", "tolerances": {"l1": 0.1}}"#);
        assert_eq!(e.key, "tolerances.l1");
        let e = schema_err(r#"{"scenario": "thermostat", "params": {"psi_mn": 18}}"#);
        assert_eq!(e.key, "params.psi_mn");
        assert_eq!(e.suggestion.as_deref(), Some("psi_min"));
    }

    #[test]
    fn unknown_scenario_is_suggested() {
        let e = schema_err(r#"{"scenario": "thermostatt"}"#);
        assert_eq!(e.key, "scenario");
        assert_eq!(e.suggestion.as_deref(), Some("thermostat"));
    }

    #[test]
    fn syntax_errors_report_position() {
        match parse_config("{\n  \"scenario\": \"thermostat\",\n  \"dt\": ,\n}") {
            Err(ConfigError::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, 9);
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn output_times_must_fit_the_horizon() {
        let e = schema_err(r#"{"scenario": "thermostat", "horizon": 1, "output_times": [0.5, 2]}"#);
        assert_eq!(e.key, "output_times");
        let e = schema_err(r#"{"scenario": "thermostat", "output_times": [0.5, 0.2]}"#);
        assert_eq!(e.key, "output_times");
    }

    #[test]
    fn inline_model_needs_an_initial_law() {
        let text = r#"{"model": {"dimension": 1, "modes": [{"box": {"lo": [0], "hi": [1]},
            "drift": {"offset": [0]}, "diffusion": [{"offset": [1]}]}],
            "terminal_states": ["out"], "reset_edges": []}}"#;
        assert_eq!(schema_err(text).key, "initial");
    }

    #[test]
    fn empty_ensemble_only_matters_for_monte_carlo() {
        assert!(parse_config(r#"{"scenario": "thermostat", "method": "pde", "ensemble_size": 0}"#).is_ok());
        let e = schema_err(r#"{"scenario": "thermostat", "method": "mc", "ensemble_size": 0}"#);
        assert_eq!(e.key, "ensemble_size");
    }

    #[test]
    fn overrides_are_checked() {
        let mut c = RunConfig::for_scenario("thermostat");
        let o = Overrides {
            dt: Some(-1.0),
            ..Default::default()
        };
        assert!(matches!(c.apply(&o), Err(ConfigError::Schema(e)) if e.key == "dt"));
    }

    #[test]
    fn schema_lists_every_key() {
        let s = schema();
        assert_eq!(s["keys"].as_array().unwrap().len(), known_keys().len());
        let c = serde_json::to_value(RunConfig::for_scenario("thermostat")).unwrap();
        for k in c.as_object().unwrap().keys() {
            assert!(known_keys().contains(&k.as_str()), "{k} missing from the schema");
        }
    }
}
