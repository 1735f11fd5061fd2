//! Named metrics with tolerances, serialized by the CLI.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// Passes when `value ≤ tolerance`.
    AtMost,
    /// Passes when `value ≥ tolerance`.
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub passed: bool,
    /// What the value is checked against.
    pub oracle: String,
    pub seed: Option<u64>,
    pub resolution: Option<usize>,
    pub dt: Option<f64>,
}

impl Metric {
    pub fn at_most(name: &str, value: f64, tolerance: f64, oracle: &str) -> Self {
        Self::new(name, value, tolerance, Comparison::AtMost, oracle)
    }

    pub fn at_least(name: &str, value: f64, tolerance: f64, oracle: &str) -> Self {
        Self::new(name, value, tolerance, Comparison::AtLeast, oracle)
    }

    fn new(name: &str, value: f64, tolerance: f64, comparison: Comparison, oracle: &str) -> Self {
        let passed = match comparison {
            Comparison::AtMost => value <= tolerance,
            Comparison::AtLeast => value >= tolerance,
        };
        Self {
            name: name.to_string(),
            value,
            tolerance,
            comparison,
            passed,
            oracle: oracle.to_string(),
            seed: None,
            resolution: None,
            dt: None,
        }
    }

    pub fn with_run(mut self, seed: Option<u64>, resolution: Option<usize>, dt: Option<f64>) -> Self {
        self.seed = seed;
        self.resolution = resolution;
        self.dt = dt;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub metrics: Vec<Metric>,
}

impl ValidationReport {
    pub fn push(&mut self, metric: Metric) {
        self.metrics.push(metric);
    }

    pub fn passed(&self) -> bool {
        self.metrics.iter().all(|m| m.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Metric> {
        self.metrics.iter().filter(|m| !m.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
