//! Run configuration. Defaults are the audit protocol's constants; any field
//! can be overridden and overrides are echoed into the report header.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::closure::LogisticConfig;
use crate::lexicon::LexiconConfig;
use crate::probe::{EncodingThresholds, LAMBDA_GRID};
use crate::seed::GLOBAL_SEED;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellRef {
    pub task: String,
    pub model: String,
}

impl CellRef {
    pub fn label(&self) -> String {
        format!("{}/{}", self.task, self.model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub probe: bool,
    pub erase: bool,
    pub closure: bool,
    pub taxonomy: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            probe: true,
            erase: true,
            closure: true,
            taxonomy: true,
        }
    }
}

impl Stages {
    pub fn probe_only() -> Self {
        Self {
            probe: true,
            erase: false,
            closure: false,
            taxonomy: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub lambda_grid: Vec<f64>,
    pub r2_min: f64,
    pub control_margin: f64,
    pub peak_margin: f64,
    pub dominance_max: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        let t = EncodingThresholds::default();
        Self {
            lambda_grid: LAMBDA_GRID.to_vec(),
            r2_min: t.r2_min,
            control_margin: t.control_margin,
            peak_margin: t.peak_margin,
            dominance_max: t.dominance_max,
        }
    }
}

impl ProbeSettings {
    pub fn thresholds(&self) -> EncodingThresholds {
        EncodingThresholds {
            r2_min: self.r2_min,
            control_margin: self.control_margin,
            peak_margin: self.peak_margin,
            dominance_max: self.dominance_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErasureSettings {
    pub sigma_rel: f64,
    pub n_resamples: usize,
    pub fdr_q: f64,
}

impl Default for ErasureSettings {
    fn default() -> Self {
        Self {
            sigma_rel: crate::erasure::SIGMA_REL,
            n_resamples: crate::stats::N_RESAMPLES,
            fdr_q: crate::stats::FDR_Q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosureSettings {
    pub l2: f64,
    pub step: f64,
    pub max_iter: usize,
    pub history: usize,
    pub grad_tol: f64,
    pub top_k: usize,
}

impl Default for ClosureSettings {
    fn default() -> Self {
        let l = LogisticConfig::default();
        Self {
            l2: l.l2,
            step: l.step,
            max_iter: l.max_iter,
            history: l.history,
            grad_tol: l.grad_tol,
            top_k: 5,
        }
    }
}

impl ClosureSettings {
    pub fn logistic(&self) -> LogisticConfig {
        LogisticConfig {
            l2: self.l2,
            step: self.step,
            max_iter: self.max_iter,
            history: self.history,
            grad_tol: self.grad_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaxonomySettings {
    pub redundancy_r: f64,
}

impl Default for TaxonomySettings {
    fn default() -> Self {
        Self {
            redundancy_r: crate::taxonomy::REDUNDANCY_R,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data_root: PathBuf,
    /// Where reports go; `<data_root>/report` when unset.
    pub out_dir: Option<PathBuf>,
    pub cells: Vec<CellRef>,
    pub stages: Stages,
    pub lexicon: LexiconConfig,
    pub probe: ProbeSettings,
    pub erasure: ErasureSettings,
    pub closure: ClosureSettings,
    pub taxonomy: TaxonomySettings,
    /// Worker threads; 0 lets the runtime decide. Never affects results.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: GLOBAL_SEED,
            data_root: PathBuf::from("data"),
            out_dir: None,
            cells: Vec::new(),
            stages: Stages::default(),
            lexicon: LexiconConfig::default(),
            probe: ProbeSettings::default(),
            erasure: ErasureSettings::default(),
            closure: ClosureSettings::default(),
            taxonomy: TaxonomySettings::default(),
            workers: 0,
        }
    }
}

/// Fields that shape where and how fast a run happens but not what it
/// computes; they stay out of the header so reports compare across machines.
const EXECUTION_ONLY: [&str; 3] = ["data_root", "out_dir", "workers"];

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => {
            out.insert(prefix.to_owned(), other.clone());
        }
    }
}

impl RunConfig {
    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| self.data_root.join("report"))
    }

    fn result_fields(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten("", &serde_json::to_value(self).expect("config serialises"), &mut out);
        out.retain(|k, _| !EXECUTION_ONLY.iter().any(|e| k == e || k.starts_with(&format!("{e}."))));
        out
    }

    /// Dotted keys whose value differs from the default.
    pub fn overrides(&self) -> BTreeMap<String, Value> {
        let base = RunConfig::default().result_fields();
        self.result_fields()
            .into_iter()
            .filter(|(k, v)| base.get(k) != Some(v))
            .collect()
    }

    /// SHA-256 of the canonical (sorted-key) JSON of every result-shaping
    /// field.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(&self.result_fields()).expect("config serialises");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_have_no_overrides() {
        assert!(RunConfig::default().overrides().is_empty());
    }

    #[test]
    fn overrides_are_dotted_and_echo_value() {
        let mut c = RunConfig::default();
        c.probe.r2_min = 0.05;
        c.workers = 3;
        let o = c.overrides();
        assert_eq!(o.len(), 1);
        assert_eq!(o["probe.r2_min"], serde_json::json!(0.05));
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn execution_fields_do_not_change_hash() {
        let mut c = RunConfig::default();
        c.workers = 8;
        c.out_dir = Some("elsewhere".into());
        c.data_root = "/mnt/other".into();
        assert_eq!(c.hash(), RunConfig::default().hash());
    }
}
