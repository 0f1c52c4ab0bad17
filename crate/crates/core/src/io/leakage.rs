//! Split-access trace and the leakage audit.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::adapter::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    /// Estimates parameters (scalers, probes, erasers, surrogates).
    Fit,
    /// Chooses among candidates (λ, peak layer, encoding gate).
    Selection,
    /// Produces reported statistics only.
    Report,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub stage: String,
    pub kind: StageKind,
    pub split: Split,
    pub statistic: String,
}

/// Append-only record of split reads.
#[derive(Debug, Default)]
pub struct Trace {
    accesses: Mutex<Vec<Access>>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, stage: &str, kind: StageKind, split: Split, statistic: &str) {
        self.accesses.lock().expect("trace lock").push(Access {
            stage: stage.into(),
            kind,
            split,
            statistic: statistic.into(),
        });
    }

    pub fn accesses(&self) -> Vec<Access> {
        self.accesses.lock().expect("trace lock").clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub pass: bool,
    pub violations: Vec<Access>,
}

/// Fails iff a fit or selection stage read the test split.
pub fn leakage_audit(accesses: &[Access]) -> LeakageReport {
    let violations: Vec<Access> = accesses
        .iter()
        .filter(|a| a.split == Split::Test && a.kind != StageKind::Report)
        .cloned()
        .collect();
    LeakageReport {
        pass: violations.is_empty(),
        violations,
    }
}
