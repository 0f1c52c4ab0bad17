//! On-disk layout of an audit cell.
//!
//! ```text
//! <root>/<task>/<model>/
//!   manifest.json
//!   activations/layer_<l>_<split>.bin
//!   activations/predictions_<split>.bin
//!   epochs/<split>.bin
//!   features/<split>.bin, features/registry.json, features/qc.csv
//!   edited/…            offline edited-forward exchange
//!   report/…
//! ```

mod leakage;
mod matrix;

pub use leakage::{leakage_audit, Access, LeakageReport, StageKind, Trace};
pub use matrix::{
    decode_matrix, decode_matrix_with, encode_matrix, encode_matrix_with, quantize_f32, read_aligned, read_aligned_with, read_matrix,
    read_matrix_with, row_id_digest, row_ids, write_matrix, write_matrix_with, Finite, MatrixHeader, Meta,
    StoredMatrix, DTYPE, HEADER_ALIGN, MATRIX_FORMAT,
};

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::adapter::{ModelAdapter, Split};
use crate::error::{Error, Result};
use crate::signal::Epoch;
use crate::stats::MetricKind;

pub const MANIFEST_FORMAT: &str = "eeg-audit-cell/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRows {
    pub row_ids: Vec<String>,
    pub labels: Vec<usize>,
}

impl SplitRows {
    pub fn new(split: Split, labels: Vec<usize>) -> Self {
        Self {
            row_ids: row_ids(split.as_str(), labels.len()),
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits<T> {
    pub train: T,
    pub val: T,
    pub test: T,
}

impl<T> Splits<T> {
    pub fn get(&self, s: Split) -> &T {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(Split, &T) -> U) -> Splits<U> {
        Splits {
            train: f(Split::Train, &self.train),
            val: f(Split::Val, &self.val),
            test: f(Split::Test, &self.test),
        }
    }

    pub fn try_map<U>(&self, mut f: impl FnMut(Split, &T) -> Result<U>) -> Result<Splits<U>> {
        Ok(Splits {
            train: f(Split::Train, &self.train)?,
            val: f(Split::Val, &self.val)?,
            test: f(Split::Test, &self.test)?,
        })
    }
}

/// Split membership, labels and model shape of one (task, model) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellManifest {
    pub format: String,
    pub task: String,
    pub model: String,
    pub metric: MetricKind,
    pub n_classes: usize,
    pub n_layers: usize,
    pub d_hidden: usize,
    pub splits: Splits<SplitRows>,
}

impl CellManifest {
    pub fn cell(&self) -> String {
        format!("{}/{}", self.task, self.model)
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        let bad = |detail: String| Error::Format {
            path: path.to_path_buf(),
            detail,
        };
        if self.format != MANIFEST_FORMAT {
            return Err(bad(format!("unknown manifest format {}", self.format)));
        }
        let expected = MetricKind::for_classes(self.n_classes);
        if self.metric != expected {
            return Err(bad(format!(
                "metric {:?} does not match {} classes",
                self.metric, self.n_classes
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for s in Split::ALL {
            let rows = self.splits.get(s);
            if rows.labels.len() != rows.row_ids.len() {
                return Err(bad(format!("{s}: {} labels for {} rows", rows.labels.len(), rows.len())));
            }
            if let Some(l) = rows.labels.iter().find(|&&l| l >= self.n_classes) {
                return Err(bad(format!("{s}: label {l} out of range")));
            }
            for id in &rows.row_ids {
                if !seen.insert(id.as_str()) {
                    return Err(bad(format!("row id {id} appears in more than one split")));
                }
            }
        }
        Ok(())
    }
}

/// Paths inside one cell directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellPaths {
    pub root: PathBuf,
}

impl CellPaths {
    pub fn new(data_root: &Path, task: &str, model: &str) -> Self {
        Self {
            root: data_root.join(task).join(model),
        }
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn activation(&self, layer: usize, split: Split) -> PathBuf {
        self.root.join("activations").join(format!("layer_{layer}_{split}.bin"))
    }

    pub fn predictions(&self, split: Split) -> PathBuf {
        self.root.join("activations").join(format!("predictions_{split}.bin"))
    }

    pub fn epochs(&self, split: Split) -> PathBuf {
        self.root.join("epochs").join(format!("{split}.bin"))
    }

    pub fn features(&self, split: Split) -> PathBuf {
        self.root.join("features").join(format!("{split}.bin"))
    }

    pub fn feature_registry(&self) -> PathBuf {
        self.root.join("features").join("registry.json")
    }

    pub fn qc_csv(&self) -> PathBuf {
        self.root.join("features").join("qc.csv")
    }

    pub fn edited_dir(&self) -> PathBuf {
        self.root.join("edited")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn planted_dir(&self) -> PathBuf {
        self.root.join("planted")
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::json(path, e))
}

pub fn write_manifest(paths: &CellPaths, m: &CellManifest) -> Result<()> {
    write_json(&paths.manifest(), m)
}

pub fn read_manifest(paths: &CellPaths) -> Result<CellManifest> {
    let path = paths.manifest();
    let m: CellManifest = read_json(&path)?;
    m.validate(&path)?;
    Ok(m)
}

/// Layer activations and frozen-head predictions of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    pub manifest: CellManifest,
    /// `layers[l]` holds the three splits of layer `l`.
    pub layers: Vec<Splits<DMatrix<f64>>>,
    pub predictions: Splits<DMatrix<f64>>,
}

impl ActivationCache {
    pub fn activations(&self, layer: usize, split: Split) -> Result<&DMatrix<f64>> {
        self.layers
            .get(layer)
            .map(|l| l.get(split))
            .ok_or_else(|| Error::AdapterRefused {
                cell: self.manifest.cell(),
                layer,
                reason: format!("cache has {} layers", self.layers.len()),
            })
    }
}

/// Writes the cache's manifest, layer blobs and predictions.
pub fn write_cache(paths: &CellPaths, cache: &ActivationCache) -> Result<()> {
    write_manifest(paths, &cache.manifest)?;
    for (l, layer) in cache.layers.iter().enumerate() {
        for s in Split::ALL {
            let ids = &cache.manifest.splits.get(s).row_ids;
            write_matrix(&paths.activation(l, s), layer.get(s), ids, None)?;
        }
    }
    for s in Split::ALL {
        let ids = &cache.manifest.splits.get(s).row_ids;
        write_matrix(&paths.predictions(s), cache.predictions.get(s), ids, None)?;
    }
    Ok(())
}

/// Loads and validates a cache: sizes, checksums, finiteness, row alignment
/// against the manifest and a constant hidden width.
pub fn load_cache(paths: &CellPaths) -> Result<ActivationCache> {
    let manifest = read_manifest(paths)?;
    let read_split = |path: PathBuf, s: Split, what: String| -> Result<DMatrix<f64>> {
        read_aligned(&path, &manifest.splits.get(s).row_ids, &what).map_err(|e| match e {
            Error::Format { path, detail } => Error::Format {
                path,
                detail: format!("{what}: {detail}"),
            },
            other => other,
        })
    };
    let mut layers = Vec::with_capacity(manifest.n_layers);
    for l in 0..manifest.n_layers {
        let layer = Splits {
            train: read_split(paths.activation(l, Split::Train), Split::Train, format!("layer {l} split train"))?,
            val: read_split(paths.activation(l, Split::Val), Split::Val, format!("layer {l} split val"))?,
            test: read_split(paths.activation(l, Split::Test), Split::Test, format!("layer {l} split test"))?,
        };
        for s in Split::ALL {
            if layer.get(s).ncols() != manifest.d_hidden {
                return Err(Error::shape(
                    format!("hidden width of layer {l} split {s}"),
                    manifest.d_hidden,
                    layer.get(s).ncols(),
                ));
            }
        }
        layers.push(layer);
    }
    let predictions = Splits {
        train: read_split(paths.predictions(Split::Train), Split::Train, "predictions split train".into())?,
        val: read_split(paths.predictions(Split::Val), Split::Val, "predictions split val".into())?,
        test: read_split(paths.predictions(Split::Test), Split::Test, "predictions split test".into())?,
    };
    Ok(ActivationCache {
        manifest,
        layers,
        predictions,
    })
}

/// Flattens epochs into one row each (`channel`-major samples).
pub fn write_epochs(path: &Path, epochs: &[Epoch], ids: &[String]) -> Result<()> {
    let first = epochs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no epochs to write".into()))?;
    let (n_ch, n_s) = (first.n_channels(), first.n_samples());
    let mut m = DMatrix::zeros(epochs.len(), n_ch * n_s);
    for (r, e) in epochs.iter().enumerate() {
        if e.n_channels() != n_ch || e.n_samples() != n_s {
            return Err(Error::shape("epoch shape", format!("{n_ch}x{n_s}"), format!("{}x{}", e.n_channels(), e.n_samples())));
        }
        for c in 0..n_ch {
            for t in 0..n_s {
                m[(r, c * n_s + t)] = e.data()[(c, t)];
            }
        }
    }
    let mut meta = Meta::new();
    meta.insert("fs".into(), first.fs().into());
    meta.insert("lowpass".into(), first.lowpass().into());
    meta.insert("n_channels".into(), n_ch.into());
    meta.insert("n_samples".into(), n_s.into());
    write_matrix_with(path, &m, ids, Some(meta), Finite::Allowed)
}

/// Reads epochs written by [`write_epochs`]. Rows that fail epoch validation
/// are reported by index rather than aborting the whole file.
pub fn read_epochs(path: &Path, ids: &[String]) -> Result<(Vec<Option<Epoch>>, Vec<(usize, String)>)> {
    let stored = read_matrix_with(path, Finite::Allowed)?;
    if stored.header.row_id_digest != row_id_digest(ids) || stored.header.shape[0] != ids.len() {
        return Err(Error::Alignment {
            what: path.display().to_string(),
            detail: "epoch rows do not match the manifest".into(),
        });
    }
    let meta = stored.header.meta.clone().unwrap_or_default();
    let get = |k: &str| {
        meta.get(k)
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                detail: format!("epoch header lacks {k}"),
            })
    };
    let (fs, lowpass) = (get("fs")?, get("lowpass")?);
    let (n_ch, n_s) = (get("n_channels")? as usize, get("n_samples")? as usize);
    if n_ch * n_s != stored.header.shape[1] {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "epoch shape disagrees with its header".into(),
        });
    }
    let mut epochs = Vec::with_capacity(ids.len());
    let mut failures = Vec::new();
    for r in 0..ids.len() {
        let data = DMatrix::from_fn(n_ch, n_s, |c, t| stored.values[(r, c * n_s + t)]);
        match Epoch::new(data, fs, lowpass) {
            Ok(e) => epochs.push(Some(e)),
            Err(e) => {
                failures.push((r, e.to_string()));
                epochs.push(None);
            }
        }
    }
    Ok((epochs, failures))
}

/// Writes a cache straight from an adapter.
pub fn cache_from_adapter(manifest: &CellManifest, adapter: &dyn ModelAdapter) -> Result<ActivationCache> {
    let layers = (0..adapter.n_layers())
        .map(|l| manifest.splits.try_map(|s, _| adapter.activations(l, s)))
        .collect::<Result<Vec<_>>>()?;
    let predictions = manifest.splits.try_map(|s, _| adapter.base_predictions(s))?;
    Ok(ActivationCache {
        manifest: manifest.clone(),
        layers,
        predictions,
    })
}
