use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Too few replications to judge.
    #[serde(rename = "insufficient sample")]
    InsufficientSample,
    /// Measured outside the regime the threshold is stated for; values are
    /// reported but not judged.
    Informational,
}

/// Outcome of one experiment. Every threshold used for the verdict is kept
/// next to the measured values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub status: Status,
    pub pass: bool,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub thresholds: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub artifacts: Vec<String>,
}

impl ExperimentReport {
    pub(crate) fn new(name: &str, seed: u64) -> Self {
        ExperimentReport {
            name: name.into(),
            status: Status::Fail,
            pass: false,
            seed,
            metrics: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            notes: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub(crate) fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.insert(key.into(), value);
    }

    pub(crate) fn threshold(&mut self, key: impl Into<String>, value: f64) {
        self.thresholds.insert(key.into(), value);
    }

    pub(crate) fn verdict(&mut self, pass: bool) {
        self.pass = pass;
        self.status = if pass { Status::Pass } else { Status::Fail };
    }

    pub(crate) fn set_status(&mut self, status: Status) {
        self.status = status;
        self.pass = status == Status::Pass;
    }
}
