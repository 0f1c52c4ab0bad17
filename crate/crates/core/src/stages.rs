//! Disk-backed stages of one cell: feature extraction from stored epochs and
//! assembling an audit input from the cell directory.

use std::fmt::Write as _;
use std::fs;

use nalgebra::DMatrix;

use crate::adapter::{ModelAdapter, Split};
use crate::error::{Error, Result};
use crate::io::{
    read_aligned_with, read_epochs, read_json, read_manifest, write_json, write_matrix_with, CellManifest, CellPaths,
    Finite, Splits,
};
use crate::lexicon::{compute_rows, ColumnLayout, ColumnMeta, FeatureMatrix, LexiconConfig};
use crate::report::FailureEntry;

/// Raw features of a cell, split by split, with per-row diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureOutcome {
    pub raw: Splits<DMatrix<f64>>,
    /// Epochs that failed validation; their rows are left non-finite and get
    /// imputed at standardisation.
    pub failures: Vec<FailureEntry>,
}

impl FeatureOutcome {
    /// Rows train ‖ val ‖ test.
    pub fn stacked(&self) -> DMatrix<f64> {
        stack(&self.raw)
    }
}

fn stack(s: &Splits<DMatrix<f64>>) -> DMatrix<f64> {
    let cols = s.train.ncols();
    let n = s.train.nrows() + s.val.nrows() + s.test.nrows();
    let mut out = DMatrix::zeros(n, cols);
    let mut r = 0;
    for part in [&s.train, &s.val, &s.test] {
        out.rows_mut(r, part.nrows()).copy_from(part);
        r += part.nrows();
    }
    out
}

/// Reads `epochs/<split>.bin` and computes the expanded features.
pub fn extract_features(paths: &CellPaths, manifest: &CellManifest, cfg: &LexiconConfig) -> Result<FeatureOutcome> {
    let n_cols = ColumnLayout::registry().n_columns();
    let mut failures = Vec::new();
    let raw = manifest.splits.try_map(|s, rows| {
        let (epochs, bad) = read_epochs(&paths.epochs(s), &rows.row_ids)?;
        for (r, why) in bad {
            failures.push(FailureEntry {
                cell: manifest.cell(),
                feature: None,
                stage: "features".into(),
                reason: format!("epoch {} rejected: {why}", rows.row_ids[r]),
                hard: true,
            });
        }
        let good: Vec<usize> = (0..epochs.len()).filter(|&i| epochs[i].is_some()).collect();
        let batch: Vec<_> = good.iter().map(|&i| epochs[i].clone().expect("filtered")).collect();
        let mut m = DMatrix::from_element(epochs.len(), n_cols, f64::NAN);
        if !batch.is_empty() {
            let f = compute_rows(&batch, cfg)?;
            for (k, &i) in good.iter().enumerate() {
                m.set_row(i, &f.values.row(k));
            }
        }
        Ok(m)
    })?;
    Ok(FeatureOutcome { raw, failures })
}

/// QC table of a standardised matrix. Low-variance columns are kept and
/// starred.
pub fn qc_csv(fm: &FeatureMatrix) -> String {
    let mut s = String::from("column,feature,statistic,method,nonfinite_ratio,low_variance\n");
    for (c, meta) in fm.columns.iter().enumerate() {
        let qc = &fm.standardizer.qc[c];
        let _ = writeln!(
            s,
            "{c},{},{},{:?},{},{}",
            meta.feature,
            meta.statistic,
            fm.standardizer.scalers[c].method,
            qc.nonfinite_ratio,
            if qc.low_variance { "*" } else { "" }
        );
    }
    s
}

/// Writes raw features (one file per split), the column registry, the QC
/// table and the row diagnostics under `features/`.
pub fn write_features(paths: &CellPaths, manifest: &CellManifest, out: &FeatureOutcome) -> Result<FeatureMatrix> {
    for s in Split::ALL {
        write_matrix_with(&paths.features(s), out.raw.get(s), &manifest.splits.get(s).row_ids, None, Finite::Allowed)?;
    }
    write_json(&paths.feature_registry(), &ColumnLayout::registry().columns().to_vec())?;
    let fm = standardize_cell(manifest, &crate::io::quantize_f32(&out.stacked()))?;
    let qc = paths.qc_csv();
    fs::write(&qc, qc_csv(&fm)).map_err(|e| Error::io(&qc, e))?;
    write_json(&paths.root.join("features").join("failures.json"), &out.failures)?;
    Ok(fm)
}

fn standardize_cell(manifest: &CellManifest, raw: &DMatrix<f64>) -> Result<FeatureMatrix> {
    let train: Vec<usize> = (0..manifest.splits.train.len()).collect();
    FeatureMatrix::standardize(raw, &train)
}

/// Reads the stored raw features of a cell and standardises them on the
/// training rows.
pub fn load_features(paths: &CellPaths, manifest: &CellManifest) -> Result<FeatureMatrix> {
    let registry: Vec<ColumnMeta> = read_json(&paths.feature_registry())?;
    if registry != ColumnLayout::registry().columns() {
        return Err(Error::Format {
            path: paths.feature_registry(),
            detail: "feature columns differ from this build's registry".into(),
        });
    }
    let raw = manifest
        .splits
        .try_map(|s, rows| {
            read_aligned_with(&paths.features(s), &rows.row_ids, &format!("features split {s}"), Finite::Allowed)
        })?;
    for s in Split::ALL {
        if raw.get(s).ncols() != registry.len() {
            return Err(Error::shape(format!("feature columns of split {s}"), registry.len(), raw.get(s).ncols()));
        }
    }
    standardize_cell(manifest, &stack(&raw))
}

/// A cell read back from disk, ready for [`crate::pipeline::CellData`].
pub struct PreparedCell {
    pub manifest: CellManifest,
    pub features: FeatureMatrix,
    pub adapter: Box<dyn ModelAdapter>,
}

/// Reads the manifest and features of a cell and builds its adapter.
pub fn prepare_cell(
    paths: &CellPaths,
    adapter: impl FnOnce(&CellPaths, &CellManifest) -> Result<Box<dyn ModelAdapter>>,
) -> Result<PreparedCell> {
    let manifest = read_manifest(paths)?;
    let features = load_features(paths, &manifest)?;
    let adapter = adapter(paths, &manifest)?;
    if adapter.n_layers() != manifest.n_layers {
        return Err(Error::shape("adapter layers", manifest.n_layers, adapter.n_layers()));
    }
    Ok(PreparedCell {
        manifest,
        features,
        adapter,
    })
}
