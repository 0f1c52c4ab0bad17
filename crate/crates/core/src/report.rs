//! The audit report and its exports.
//!
//! `report.json` is the full record; the CSVs are flat extracts of it. Both
//! are written deterministically: no timestamps, no paths that depend on the
//! machine, ordered maps and registry order throughout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::closure::{ClosureRecord, SensitivityRecord};
use crate::config::Stages;
use crate::erasure::ResidualProbe;
use crate::error::{Error, Result};
use crate::io::{Access, LeakageReport};
use crate::probe::ProbeRecord;
use crate::stats::{CausalDecision, MetricKind, Replicates, Status};
use crate::taxonomy::{FamilyAggregate, TaxonomyRecord};

pub const REPORT_FORMAT: &str = "eeg-audit-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub format: String,
    pub seed: u64,
    pub config_hash: String,
    /// Every field that differs from the protocol defaults.
    pub overrides: BTreeMap<String, serde_json::Value>,
    pub stages: Stages,
}

/// One eraser's effect on the held-out metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub delta: f64,
    pub rank: usize,
    pub fallback: bool,
    pub replicates: Replicates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErasureRecord {
    pub feature: String,
    pub layer: usize,
    pub real: Contrast,
    pub random: Contrast,
    pub shuffled: Contrast,
    pub gaussian: Contrast,
    pub residual: ResidualProbe,
    pub bootstrap_provenance: String,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_smoothed: f64,
    pub q_bh: f64,
    pub causal: bool,
}

impl ErasureRecord {
    /// All four replicate sets were drawn on the same resample rows.
    pub fn paired(&self) -> bool {
        let d = &self.real.replicates.plan_digest;
        [&self.random, &self.shuffled, &self.gaussian]
            .iter()
            .all(|c| &c.replicates.plan_digest == d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub feature: String,
    pub status: Status,
    pub decision: Option<CausalDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub cell: String,
    pub feature: Option<String>,
    pub stage: String,
    pub reason: String,
    /// A computation failed, as opposed to a recorded exclusion.
    pub hard: bool,
}

/// Column QC summary carried into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcSummary {
    /// Columns with non-finite train entries before imputation.
    pub nonfinite_columns: Vec<String>,
    /// Low-variance columns, kept and starred.
    pub low_variance_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub task: String,
    pub model: String,
    pub metric: MetricKind,
    pub n_rows: [usize; 3],
    /// Frozen-model test metric.
    pub fm: f64,
    pub qc: QcSummary,
    pub probes: Vec<ProbeRecord>,
    pub erasures: Vec<ErasureRecord>,
    /// Empty when only the probe stage ran.
    pub triplets: Vec<TripletRecord>,
    pub closure: Option<ClosureRecord>,
    pub sensitivity: Option<SensitivityRecord>,
    pub families: Vec<FamilyAggregate>,
}

impl CellReport {
    pub fn cell(&self) -> String {
        format!("{}/{}", self.task, self.model)
    }

    pub fn status(&self, feature: &str) -> Option<Status> {
        self.triplets.iter().find(|t| t.feature == feature).map(|t| t.status)
    }

    pub fn statuses(&self) -> impl Iterator<Item = (&str, Status)> {
        self.triplets.iter().map(|t| (t.feature.as_str(), t.status))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub header: ReportHeader,
    pub cells: Vec<CellReport>,
    pub taxonomy: Vec<TaxonomyRecord>,
    pub failures: Vec<FailureEntry>,
    pub trace: Vec<Access>,
    pub leakage: LeakageReport,
}

impl AuditReport {
    pub fn hard_errors(&self) -> impl Iterator<Item = &FailureEntry> {
        self.failures.iter().filter(|f| f.hard)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn probes_csv(r: &AuditReport) -> String {
    let mut s = String::from(
        "task,model,feature,p_q,peak_layer,r2_val,r2_test,peak_margin,shuffled_val,gaussian_val,dominance_val,selection_encoded,test_encoded\n",
    );
    for c in &r.cells {
        for p in &c.probes {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.task,
                c.model,
                p.feature,
                p.p_q,
                p.peak_layer,
                num(p.peak_r2_val()),
                num(p.r2_test[p.peak_layer]),
                num(p.peak_margin),
                num(p.shuffled_val),
                num(p.gaussian_val),
                num(p.dominance_val),
                p.selection_encoded,
                p.test_encoded
            );
        }
    }
    s
}

/// Per-panel statistics: feature, Δ, CI, p, q, status.
pub fn stats_csv(r: &AuditReport) -> String {
    let mut s = String::from(
        "task,model,feature,layer,delta,delta_random,delta_shuffled,delta_gaussian,ci_low,ci_high,p,q,residual_r2,residual_pass,status\n",
    );
    for c in &r.cells {
        for t in &c.triplets {
            let e = c.erasures.iter().find(|e| e.feature == t.feature);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.task,
                c.model,
                t.feature,
                e.map(|e| e.layer.to_string()).unwrap_or_default(),
                opt(e.map(|e| e.real.delta)),
                opt(e.map(|e| e.random.delta)),
                opt(e.map(|e| e.shuffled.delta)),
                opt(e.map(|e| e.gaussian.delta)),
                opt(e.map(|e| e.ci_low)),
                opt(e.map(|e| e.ci_high)),
                opt(e.map(|e| e.p_smoothed)),
                opt(e.map(|e| e.q_bh)),
                opt(e.map(|e| e.residual.r2)),
                e.map(|e| e.residual.pass.to_string()).unwrap_or_default(),
                t.status.as_str()
            );
        }
    }
    s
}

/// Closure table, one row per cell.
pub fn closure_csv(r: &AuditReport) -> String {
    let mut s = String::from("task,model,b0,ball,benc,brep,bfam,brand,fm,rc,closure,undefined\n");
    for c in &r.cells {
        if let Some(k) = &c.closure {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                c.task,
                c.model,
                num(k.b0),
                num(k.ball),
                num(k.benc),
                num(k.brep),
                num(k.bfam),
                num(k.brand),
                num(k.fm),
                k.rc_count,
                opt(k.ratio),
                k.undefined
            );
        }
    }
    s
}

pub fn taxonomy_csv(r: &AuditReport) -> String {
    let mut s = String::from("feature,category,tsi,strong_tasks\n");
    for t in &r.taxonomy {
        let _ = writeln!(s, "{},{},{},{}", t.feature, t.category.as_str(), num(t.tsi), t.strong_tasks.join(";"));
    }
    s
}

pub fn families_csv(r: &AuditReport) -> String {
    let mut s = String::from("task,model,family,encoded_rate,causal_rate,effect_mass,controlled_mass,clusters\n");
    for c in &r.cells {
        for f in &c.families {
            let clusters: Vec<String> = f.clusters.iter().map(|c| c.join("+")).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                c.task,
                c.model,
                f.family,
                num(f.encoded_rate),
                num(f.causal_rate),
                num(f.effect_mass),
                num(f.controlled_mass),
                clusters.join(";")
            );
        }
    }
    s
}

pub fn failures_csv(r: &AuditReport) -> String {
    let mut s = String::from("cell,feature,stage,hard,reason\n");
    for f in &r.failures {
        let reason = f.reason.replace(',', ";");
        let _ = writeln!(s, "{},{},{},{},{}", f.cell, f.feature.as_deref().unwrap_or(""), f.stage, f.hard, reason);
    }
    s
}

/// Writes `report.json` and the CSV extracts into `dir`.
pub fn write_report(dir: &Path, r: &AuditReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("report.json");
    fs::write(&path, r.to_json()).map_err(|e| Error::io(&path, e))?;
    export_csvs(dir, r)
}

/// Writes only the CSV extracts.
pub fn export_csvs(dir: &Path, r: &AuditReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files: [(&str, String); 6] = [
        ("probes.csv", probes_csv(r)),
        ("stats.csv", stats_csv(r)),
        ("closure.csv", closure_csv(r)),
        ("taxonomy.csv", taxonomy_csv(r)),
        ("families.csv", families_csv(r)),
        ("failures.csv", failures_csv(r)),
    ];
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<AuditReport> {
    crate::io::read_json(path)
}
