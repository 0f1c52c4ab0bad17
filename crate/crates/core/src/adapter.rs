//! The edited-forward contract between the audit engine and a model.

use std::path::Path;
use std::sync::Mutex;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_cache, read_aligned, read_json, row_id_digest, write_json, write_matrix, ActivationCache, CellPaths};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A frozen model exposing cached activations and the remainder of its
/// forward pass from any layer.
///
/// `predict_from_layer(l, activations(l, s), s)` must reproduce
/// `base_predictions(s)` bit for bit.
pub trait ModelAdapter: Send + Sync {
    /// `task/model` label used in errors.
    fn cell(&self) -> String;
    fn n_layers(&self) -> usize;
    fn activations(&self, layer: usize, split: Split) -> Result<DMatrix<f64>>;
    fn base_predictions(&self, split: Split) -> Result<DMatrix<f64>>;
    fn predict_from_layer(
        &self,
        layer: usize,
        edited: &DMatrix<f64>,
        split: Split,
    ) -> Result<DMatrix<f64>>;
}

/// Request record of the offline edited-forward exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub format: String,
    pub cell: String,
    pub layer: usize,
    pub split: Split,
    pub row_id_digest: String,
    /// File names relative to the exchange directory.
    pub activations: String,
    pub predictions: String,
}

pub const EDIT_FORMAT: &str = "eeg-audit-edit/1";

/// Written by a responder in place of predictions when it declines a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refusal {
    pub reason: String,
}

/// The model side of the offline exchange: reads the edited activations named
/// in the request and writes predictions (or `refusal.json`) next to them.
pub trait Responder: Send + Sync {
    fn respond(&self, exchange_dir: &Path, request: &EditRequest) -> Result<()>;
}

/// Runs an external program with the exchange directory as its last
/// argument.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandResponder {
    pub program: String,
    pub args: Vec<String>,
}

impl Responder for CommandResponder {
    fn respond(&self, exchange_dir: &Path, request: &EditRequest) -> Result<()> {
        let status = std::process::Command::new(&self.program)
            .args(&self.args)
            .arg(exchange_dir)
            .status()
            .map_err(|e| Error::io(&self.program, e))?;
        if status.success() {
            Ok(())
        } else {
            Err(Error::AdapterRefused {
                cell: request.cell.clone(),
                layer: request.layer,
                reason: format!("{} exited with {status}", self.program),
            })
        }
    }
}

/// File-based adapter: activations and base predictions come from a loaded
/// cache, edited forwards go through a [`Responder`]. Calls are serialised
/// because they share one exchange directory.
pub struct OfflineAdapter<R: Responder> {
    paths: CellPaths,
    cache: ActivationCache,
    responder: R,
    lock: Mutex<()>,
}

impl<R: Responder> OfflineAdapter<R> {
    pub fn new(paths: CellPaths, cache: ActivationCache, responder: R) -> Self {
        Self {
            paths,
            cache,
            responder,
            lock: Mutex::new(()),
        }
    }

    pub fn open(paths: CellPaths, responder: R) -> Result<Self> {
        let cache = load_cache(&paths)?;
        Ok(Self::new(paths, cache, responder))
    }

    pub fn cache(&self) -> &ActivationCache {
        &self.cache
    }
}

impl<R: Responder> ModelAdapter for OfflineAdapter<R> {
    fn cell(&self) -> String {
        self.cache.manifest.cell()
    }

    fn n_layers(&self) -> usize {
        self.cache.layers.len()
    }

    fn activations(&self, layer: usize, split: Split) -> Result<DMatrix<f64>> {
        self.cache.activations(layer, split).cloned()
    }

    fn base_predictions(&self, split: Split) -> Result<DMatrix<f64>> {
        Ok(self.cache.predictions.get(split).clone())
    }

    fn predict_from_layer(&self, layer: usize, edited: &DMatrix<f64>, split: Split) -> Result<DMatrix<f64>> {
        let _guard = self.lock.lock().expect("exchange lock");
        if layer >= self.n_layers() {
            return Err(Error::AdapterRefused {
                cell: self.cell(),
                layer,
                reason: format!("model exposes {} layers", self.n_layers()),
            });
        }
        let dir = self.paths.edited_dir();
        let ids = &self.cache.manifest.splits.get(split).row_ids;
        let request = EditRequest {
            format: EDIT_FORMAT.into(),
            cell: self.cell(),
            layer,
            split,
            row_id_digest: row_id_digest(ids),
            activations: format!("layer_{layer}_{split}.bin"),
            predictions: format!("predictions_{split}.bin"),
        };
        let pred_path = dir.join(&request.predictions);
        let refusal_path = dir.join("refusal.json");
        for stale in [&pred_path, &refusal_path] {
            if stale.exists() {
                std::fs::remove_file(stale).map_err(|e| Error::io(stale, e))?;
            }
        }
        write_matrix(&dir.join(&request.activations), edited, ids, None)?;
        write_json(&dir.join("request.json"), &request)?;
        self.responder.respond(&dir, &request)?;
        if refusal_path.exists() {
            let r: Refusal = read_json(&refusal_path)?;
            return Err(Error::AdapterRefused {
                cell: self.cell(),
                layer,
                reason: r.reason,
            });
        }
        read_aligned(&pred_path, ids, &format!("edited predictions of {} layer {layer} split {split}", self.cell()))
    }
}
