//! The audit over prepared cells: probe, erase, test, close, classify.
//!
//! Feature rows of a cell are train, then validation, then test, matching the
//! manifest. Every split read that feeds a fit, a selection or a reported
//! statistic is declared on the run's [`Trace`].

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::adapter::{ModelAdapter, Split};
use crate::closure::{closure_cell, sensitivity_suite, ClosureData, ClosureSelection};
use crate::config::RunConfig;
use crate::erasure::{edited_predictions, null_controls_with, residual_probe, Eraser};
use crate::error::{Error, Result};
use crate::io::{leakage_audit, CellManifest, Splits, StageKind, Trace};
use crate::lexicon::{ColumnLayout, Family, FeatureMatrix, REGISTRY};
use crate::probe::{probe_feature, EncodingThresholds, LayerBank, ProbeRecord, Targets};
use crate::report::{
    AuditReport, CellReport, Contrast, ErasureRecord, FailureEntry, QcSummary, ReportHeader, TripletRecord,
    REPORT_FORMAT,
};
use crate::seed::SeedContext;
use crate::stats::{
    bh_fdr, causal_criterion_at, paired_bootstrap, percentile_ci, smoothed_p, task_metric, BootstrapPlan,
    ResampleMetric, Status,
};
use crate::taxonomy::{classify, family_aggregate_at, strong_tasks, task_mean_effect, tsi, CellStatus, TaxonomyRecord};

/// One cell ready for auditing.
pub struct CellData<'a> {
    pub manifest: &'a CellManifest,
    /// Standardised features, rows train ‖ val ‖ test.
    pub features: &'a FeatureMatrix,
    pub adapter: &'a dyn ModelAdapter,
}

/// A cell to audit, or the reason it could not be prepared.
pub enum CellInput<'a> {
    Ready(CellData<'a>),
    Skipped { cell: String, reason: String },
}

fn split_features(m: &CellManifest, f: &FeatureMatrix) -> Result<Splits<DMatrix<f64>>> {
    let (a, b, c) = (m.splits.train.len(), m.splits.val.len(), m.splits.test.len());
    if f.values.nrows() != a + b + c {
        return Err(Error::shape("feature rows", a + b + c, f.values.nrows()));
    }
    Ok(Splits {
        train: f.values.rows(0, a).into_owned(),
        val: f.values.rows(a, b).into_owned(),
        test: f.values.rows(a + b, c).into_owned(),
    })
}

fn not_encoded_reason(p: &ProbeRecord, t: &EncodingThresholds) -> String {
    let r2 = p.peak_r2_val();
    let mut why = Vec::new();
    if r2 < t.r2_min {
        why.push(format!("validation R2 {r2:.4} below {}", t.r2_min));
    }
    if r2 < p.shuffled_val + t.control_margin {
        why.push(format!("within {} of the shuffled control ({:.4})", t.control_margin, p.shuffled_val));
    }
    if r2 < p.gaussian_val + t.control_margin {
        why.push(format!("within {} of the Gaussian control ({:.4})", t.control_margin, p.gaussian_val));
    }
    if p.peak_margin < t.peak_margin {
        why.push(format!("peak margin {:.4} below {}", p.peak_margin, t.peak_margin));
    }
    if p.p_q > 1 && p.dominance_val > t.dominance_max {
        why.push(format!("one column carries {:.3} of the R2", p.dominance_val));
    }
    format!("not encoded: {}", why.join("; "))
}

struct Erasing<'a> {
    adapter: &'a dyn ModelAdapter,
    manifest: &'a CellManifest,
    z: &'a Splits<DMatrix<f64>>,
    base: ResampleMetric,
    base_metric: f64,
    cfg: &'a RunConfig,
}

impl Erasing<'_> {
    fn contrast(&self, layer: usize, eraser: &Eraser, plan: &BootstrapPlan) -> Result<Contrast> {
        let m = self.manifest;
        let preds = edited_predictions(self.adapter, layer, eraser, Split::Test)?;
        let edited = ResampleMetric::new(m.metric, &preds, &m.splits.test.labels, m.n_classes)?;
        let full = edited
            .full()
            .ok_or_else(|| Error::MetricUndefined(format!("{}: edited test metric", m.cell())))?;
        Ok(Contrast {
            delta: self.base_metric - full,
            rank: eraser.rank(),
            fallback: eraser.fallback,
            replicates: paired_bootstrap(&self.base, &edited, plan)?,
        })
    }

    fn feature(&self, q: usize, probe: &ProbeRecord, seed: &SeedContext) -> Result<ErasureRecord> {
        let layout = ColumnLayout::registry();
        let cols = layout.range(q);
        let z_tr = self.z.train.columns(cols.start, cols.len()).into_owned();
        let z_val = self.z.val.columns(cols.start, cols.len()).into_owned();
        let l = probe.peak_layer;
        let h_tr = self.adapter.activations(l, Split::Train)?;
        let h_val = self.adapter.activations(l, Split::Val)?;
        let sigma = self.cfg.erasure.sigma_rel;
        let eraser = Eraser::fit_with(&h_tr, &z_tr, sigma)?;
        let controls = null_controls_with(&h_tr, &z_tr, seed, sigma)?;
        let residual = residual_probe(&eraser, (&h_tr, &h_val), (&z_tr, &z_val), probe.peak_r2_val())?;
        let plan_seed = seed.with_purpose("bootstrap");
        let plan = BootstrapPlan::new(self.manifest.splits.test.len(), self.cfg.erasure.n_resamples, &plan_seed)?;
        let real = self.contrast(l, &eraser, &plan)?;
        let valid = real.replicates.valid();
        let (ci_low, ci_high) = percentile_ci(&valid);
        Ok(ErasureRecord {
            feature: probe.feature.clone(),
            layer: l,
            random: self.contrast(l, &controls.random, &plan)?,
            shuffled: self.contrast(l, &controls.shuffled, &plan)?,
            gaussian: self.contrast(l, &controls.gaussian, &plan)?,
            real,
            residual,
            bootstrap_provenance: plan.provenance.clone(),
            ci_low,
            ci_high,
            p_smoothed: smoothed_p(&valid),
            q_bh: 1.0,
            causal: false,
        })
    }
}

/// What one cell contributes to the run.
struct CellOutcome {
    report: CellReport,
    failures: Vec<FailureEntry>,
}

fn qc_summary(f: &FeatureMatrix) -> QcSummary {
    let name = |i: usize| format!("{}:{}", f.columns[i].feature, f.columns[i].statistic);
    QcSummary {
        nonfinite_columns: (0..f.columns.len())
            .filter(|&i| f.standardizer.qc[i].nonfinite_ratio > 0.0)
            .map(name)
            .collect(),
        low_variance_columns: (0..f.columns.len())
            .filter(|&i| f.standardizer.qc[i].low_variance)
            .map(name)
            .collect(),
    }
}

/// Audits one cell with the configured stages.
pub fn audit_cell(data: &CellData<'_>, cfg: &RunConfig, trace: &Trace) -> Result<CellReport> {
    audit_cell_inner(data, cfg, trace).map(|o| o.report)
}

fn audit_cell_inner(data: &CellData<'_>, cfg: &RunConfig, trace: &Trace) -> Result<CellOutcome> {
    let m = data.manifest;
    let label = m.cell();
    let stage = |s: &str| format!("{label} {s}");
    let layout = ColumnLayout::registry();
    if data.features.values.ncols() != layout.n_columns() {
        return Err(Error::shape("feature columns", layout.n_columns(), data.features.values.ncols()));
    }
    if data.adapter.n_layers() == 0 {
        return Err(Error::AdapterRefused {
            cell: label,
            layer: 0,
            reason: "no layers".into(),
        });
    }
    let z = split_features(m, data.features)?;
    trace.record(&stage("standardize"), StageKind::Fit, Split::Train, "column centre and scale");

    let base_test = data.adapter.base_predictions(Split::Test)?;
    let fm = task_metric(m.metric, &base_test, &m.splits.test.labels, m.n_classes)?;
    trace.record(&stage("frozen model"), StageKind::Report, Split::Test, "task metric");

    let mut report = CellReport {
        task: m.task.clone(),
        model: m.model.clone(),
        metric: m.metric,
        n_rows: [m.splits.train.len(), m.splits.val.len(), m.splits.test.len()],
        fm,
        qc: qc_summary(data.features),
        probes: Vec::new(),
        erasures: Vec::new(),
        triplets: Vec::new(),
        closure: None,
        sensitivity: None,
        families: Vec::new(),
    };
    let mut failures = Vec::new();
    if !cfg.stages.probe {
        return Ok(CellOutcome { report, failures });
    }

    // Probe stage.
    let banks = (0..data.adapter.n_layers())
        .map(|l| {
            let h = Splits {
                train: data.adapter.activations(l, Split::Train)?,
                val: data.adapter.activations(l, Split::Val)?,
                test: data.adapter.activations(l, Split::Test)?,
            };
            LayerBank::with_grid(&h.train, &h.val, &h.test, &cfg.probe.lambda_grid)
        })
        .collect::<Result<Vec<_>>>()?;
    trace.record(&stage("probe"), StageKind::Fit, Split::Train, "activation scaler and ridge weights");
    trace.record(&stage("probe"), StageKind::Selection, Split::Val, "ridge lambda and peak layer");
    trace.record(&stage("probe"), StageKind::Selection, Split::Val, "selection-encoded gate");
    trace.record(&stage("probe"), StageKind::Report, Split::Test, "test R2 and test-encoded flag");
    let cell_seed = SeedContext::new(cfg.seed, &m.task, &m.model, "", "");
    let thresholds = cfg.probe.thresholds();
    report.probes = (0..REGISTRY.len())
        .into_par_iter()
        .map(|q| {
            let cols = layout.range(q);
            let pick = |s: &DMatrix<f64>| s.columns(cols.start, cols.len()).into_owned();
            let (tr, va, te) = (pick(&z.train), pick(&z.val), pick(&z.test));
            let targets = Targets {
                train: &tr,
                val: &va,
                test: &te,
            };
            let id = REGISTRY[q].id;
            probe_feature(id, &banks, &targets, &cell_seed.with_feature(id), &thresholds)
        })
        .collect();
    drop(banks);
    for p in report.probes.iter().filter(|p| !p.selection_encoded) {
        failures.push(FailureEntry {
            cell: label.clone(),
            feature: Some(p.feature.clone()),
            stage: "probe".into(),
            reason: not_encoded_reason(p, &thresholds),
            hard: false,
        });
    }
    if !cfg.stages.erase {
        return Ok(CellOutcome { report, failures });
    }

    // Erasure stage.
    let base = ResampleMetric::new(m.metric, &base_test, &m.splits.test.labels, m.n_classes)?;
    let erasing = Erasing {
        adapter: data.adapter,
        manifest: m,
        z: &z,
        base_metric: base
            .full()
            .ok_or_else(|| Error::MetricUndefined(format!("{label}: base test metric")))?,
        base,
        cfg,
    };
    trace.record(&stage("erase"), StageKind::Fit, Split::Train, "cross-covariance erasers and null controls");
    trace.record(&stage("residual probe"), StageKind::Fit, Split::Train, "ridge refit on erased activations");
    trace.record(&stage("residual probe"), StageKind::Selection, Split::Val, "ridge lambda");
    trace.record(&stage("erase"), StageKind::Report, Split::Test, "edited metric and paired bootstrap");
    let outcomes: Vec<Option<Result<ErasureRecord>>> = report
        .probes
        .par_iter()
        .enumerate()
        .map(|(q, p)| {
            p.selection_encoded
                .then(|| erasing.feature(q, p, &cell_seed.with_feature(REGISTRY[q].id)))
        })
        .collect();

    // Statistics: BH over the full 63-feature panel, unerased features at p = 1.
    let mut p_values = vec![1.0; REGISTRY.len()];
    let mut records: Vec<Option<ErasureRecord>> = Vec::with_capacity(REGISTRY.len());
    for (q, o) in outcomes.into_iter().enumerate() {
        match o {
            Some(Ok(r)) => {
                p_values[q] = r.p_smoothed;
                records.push(Some(r));
            }
            Some(Err(e)) => {
                failures.push(FailureEntry {
                    cell: label.clone(),
                    feature: Some(REGISTRY[q].id.to_owned()),
                    stage: "erase".into(),
                    reason: e.to_string(),
                    hard: true,
                });
                records.push(None);
            }
            None => records.push(None),
        }
    }
    let bh = bh_fdr(&p_values, cfg.erasure.fdr_q);
    trace.record(&stage("stats"), StageKind::Report, Split::Test, "BH q-values and causal decisions");
    let mut deltas = vec![0.0; REGISTRY.len()];
    let mut statuses = vec![Status::NotEncoded; REGISTRY.len()];
    for (q, rec) in records.iter_mut().enumerate() {
        let probe = &report.probes[q];
        let triplet = match rec {
            Some(r) => {
                r.q_bh = bh.q[q];
                let d = causal_criterion_at(
                    true,
                    (r.ci_low, r.ci_high),
                    r.p_smoothed,
                    r.q_bh,
                    r.real.delta,
                    r.random.delta,
                    cfg.erasure.fdr_q,
                );
                r.causal = d.status == Status::RepresentationCausal;
                deltas[q] = r.real.delta;
                TripletRecord {
                    feature: probe.feature.clone(),
                    status: d.status,
                    decision: Some(d),
                }
            }
            None => TripletRecord {
                feature: probe.feature.clone(),
                status: if probe.selection_encoded {
                    Status::EncodedOnly
                } else {
                    Status::NotEncoded
                },
                decision: None,
            },
        };
        statuses[q] = triplet.status;
        report.triplets.push(triplet);
    }
    report.erasures = records.into_iter().flatten().collect();

    // Closure stage.
    if cfg.stages.closure {
        let cdata = ClosureData {
            train_x: &z.train,
            train_y: &m.splits.train.labels,
            test_x: &z.test,
            test_y: &m.splits.test.labels,
            n_classes: m.n_classes,
            kind: m.metric,
        };
        let sel = ClosureSelection {
            test_encoded: (0..REGISTRY.len()).filter(|&q| report.probes[q].test_encoded).collect(),
            causal: (0..REGISTRY.len())
                .filter(|&q| statuses[q] == Status::RepresentationCausal)
                .collect(),
            delta: deltas.clone(),
        };
        let seed = cell_seed.with_purpose("closure");
        let logistic = cfg.closure.logistic();
        trace.record(&stage("closure"), StageKind::Fit, Split::Train, "block scalers and surrogate weights");
        trace.record(&stage("closure"), StageKind::Report, Split::Test, "block metrics and closure ratio");
        match closure_cell(&cdata, &sel, fm, &seed, &logistic) {
            Ok(rec) => {
                if sel.causal.is_empty() {
                    failures.push(FailureEntry {
                        cell: label.clone(),
                        feature: None,
                        stage: "closure".into(),
                        reason: "no representation-causal features; sensitivity suite skipped".into(),
                        hard: false,
                    });
                } else {
                    match sensitivity_suite(&cdata, &sel, &rec, &seed, cfg.closure.top_k, &logistic) {
                        Ok(s) => report.sensitivity = Some(s),
                        Err(e) => failures.push(FailureEntry {
                            cell: label.clone(),
                            feature: None,
                            stage: "sensitivity".into(),
                            reason: e.to_string(),
                            hard: true,
                        }),
                    }
                }
                report.closure = Some(rec);
            }
            Err(e) => failures.push(FailureEntry {
                cell: label.clone(),
                feature: None,
                stage: "closure".into(),
                reason: e.to_string(),
                hard: true,
            }),
        }
    }

    if cfg.stages.taxonomy {
        report.families = Family::ALL
            .into_iter()
            .map(|f| family_aggregate_at(f, &z.train, &statuses, &deltas, cfg.taxonomy.redundancy_r))
            .collect();
    }
    Ok(CellOutcome { report, failures })
}

/// Cross-cell feature categories.
pub fn taxonomy_records(cells: &[CellReport]) -> Vec<TaxonomyRecord> {
    REGISTRY
        .iter()
        .map(|f| {
            let grid: Vec<CellStatus> = cells
                .iter()
                .filter_map(|c| {
                    c.status(f.id).map(|status| CellStatus {
                        task: c.task.clone(),
                        model: c.model.clone(),
                        status,
                    })
                })
                .collect();
            let tasks: BTreeSet<&str> = cells.iter().map(|c| c.task.as_str()).collect();
            let means: Vec<f64> = tasks
                .iter()
                .map(|t| {
                    let d: Vec<f64> = cells
                        .iter()
                        .filter(|c| c.task == *t)
                        .map(|c| {
                            c.erasures
                                .iter()
                                .find(|e| e.feature == f.id)
                                .map_or(0.0, |e| e.real.delta)
                        })
                        .collect();
                    task_mean_effect(&d)
                })
                .collect();
            TaxonomyRecord {
                feature: f.id.to_owned(),
                strong_tasks: strong_tasks(&grid).into_iter().collect(),
                category: classify(&grid),
                tsi: tsi(&means),
                grid,
            }
        })
        .collect()
}

/// Runs every cell (in parallel, results in input order), then the
/// cross-cell taxonomy and the leakage audit.
pub fn run_audit(cfg: &RunConfig, inputs: &[CellInput<'_>]) -> AuditReport {
    let outcomes: Vec<(std::result::Result<CellOutcome, FailureEntry>, Trace)> = inputs
        .par_iter()
        .map(|input| {
            let trace = Trace::new();
            let out = match input {
                CellInput::Ready(data) => audit_cell_inner(data, cfg, &trace).map_err(|e| FailureEntry {
                    cell: data.manifest.cell(),
                    feature: None,
                    stage: "cell".into(),
                    reason: format!("cell skipped: {e}"),
                    hard: true,
                }),
                CellInput::Skipped { cell, reason } => Err(FailureEntry {
                    cell: cell.clone(),
                    feature: None,
                    stage: "cell".into(),
                    reason: format!("cell skipped: {reason}"),
                    hard: true,
                }),
            };
            (out, trace)
        })
        .collect();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    let mut accesses = Vec::new();
    for (out, trace) in outcomes {
        accesses.extend(trace.accesses());
        match out {
            Ok(o) => {
                cells.push(o.report);
                failures.extend(o.failures);
            }
            Err(f) => failures.push(f),
        }
    }
    let taxonomy = if cfg.stages.taxonomy && cfg.stages.erase {
        taxonomy_records(&cells)
    } else {
        Vec::new()
    };
    let leakage = leakage_audit(&accesses);
    AuditReport {
        header: ReportHeader {
            format: REPORT_FORMAT.into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            overrides: cfg.overrides(),
            stages: cfg.stages,
        },
        cells,
        taxonomy,
        failures,
        trace: accesses,
        leakage,
    }
}
