//! Configuration loading, run orchestration and result files for the
//! `fpk-reset` command.

pub mod config;
pub mod run;

pub use config::{
    load_config, parse_config, schema, ConfigError, IntervalExitParams, Method, Overrides, RunConfig,
    SchemaError, Tolerances,
};
pub use run::{run, validate, RunError, RunOutcome};
