//! Planted models: synthetic cells whose used and encoded-only features are
//! known by construction.
//!
//! Construction, in order:
//!
//! 1. synthetic epochs, expanded features, train-fitted standardisation;
//! 2. a random choice of `S_used`, then a best-first choice of `S_enc`, both
//!    screened on head alignment (below);
//! 3. the leading whitened principal coordinates of each planted feature,
//!    injected at its assigned layer along its own block of a random
//!    orthonormal frame, plus Gaussian noise;
//! 4. `h_{l+1} = q32(h_l T_l + D_{l+1})` with `T_l` a scaled rotation and
//!    `D_l` the layer's drive, and a linear head on the last layer.
//!
//! The head reads one coordinate per used feature: its first principal
//! coordinate residualised, over the train rows, on every column of every
//! other planted feature. The noise along that direction is residualised the
//! same way. So the train cross-covariance between a head direction and any
//! other planted feature is exactly zero at every layer, and an eraser fitted
//! for an encoded-only feature has nothing of the head to remove. Head
//! alignment is the correlation between a used feature's first principal
//! coordinate and its head coordinate; the selection keeps it high so that
//! erasing the feature removes its head.
//!
//! Labels follow a logistic rule in the head coordinates, so they are
//! uncorrelated over the train rows with every encoded-only column.

pub mod synth;

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::adapter::{EditRequest, ModelAdapter, Responder, Split};
use crate::erasure::random_orthonormal;
use crate::error::{Error, Result};
use crate::io::{
    quantize_f32, read_aligned, read_json, write_cache, write_epochs, write_json, write_matrix,
    write_manifest, ActivationCache, CellManifest, CellPaths, SplitRows, Splits, MANIFEST_FORMAT,
};
use crate::stages::{write_features, FeatureOutcome};
use crate::lexicon::{compute_rows, ColumnLayout, FeatureMatrix, LexiconConfig, REGISTRY};
use crate::seed::SeedContext;
use crate::signal::Epoch;
use crate::stats::{MetricKind, Status};

pub use synth::{synth_epoch, SynthConfig};

/// Bounded regeneration attempts for an epoch whose features are not finite.
pub const MAX_REGENERATIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub seed: u64,
    pub task: String,
    pub model: String,
    pub n_layers: usize,
    pub d_hidden: usize,
    pub n_used: usize,
    pub n_enc: usize,
    /// Per-coordinate signal-to-noise ratio of the embedding.
    pub snr: f64,
    /// Scale of the layer-to-layer rotation.
    pub decay: f64,
    /// Amplitude of the head coordinate relative to the other embedded
    /// coordinates.
    pub readout_gain: f64,
    /// Logit slope of the label rule on the unit-variance used score.
    pub label_sharpness: f64,
    /// Principal coordinates embedded per feature (capped by its columns).
    pub max_coordinates: usize,
    /// Initial floor on the head alignment of a used feature: correlation of
    /// its first principal coordinate with that coordinate's residual on the
    /// columns of every other planted feature. Relaxed in steps of 0.05 when
    /// too few features qualify.
    pub min_head_alignment: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub synth: SynthConfig,
    /// Explicit planted sets; drawn at random when absent.
    pub used: Option<Vec<String>>,
    pub enc: Option<Vec<String>>,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            seed: crate::seed::GLOBAL_SEED,
            task: "planted".into(),
            model: "linear".into(),
            n_layers: 4,
            d_hidden: 64,
            n_used: 8,
            n_enc: 8,
            snr: 10.0,
            decay: 0.8,
            readout_gain: 4.0,
            label_sharpness: 5.0,
            max_coordinates: 3,
            min_head_alignment: 0.9,
            n_train: 2000,
            n_val: 500,
            n_test: 1000,
            synth: SynthConfig::default(),
            used: None,
            enc: None,
        }
    }
}

impl PlantedSpec {
    fn seed(&self, purpose: &str) -> SeedContext {
        SeedContext::new(self.seed, &self.task, &self.model, "", purpose)
    }

    fn n_rows(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("planted spec: {m}")));
        if self.n_layers == 0 || self.d_hidden == 0 {
            return bad("need at least one layer and one hidden unit");
        }
        if self.n_used == 0 && self.used.as_ref().is_none_or(|u| u.is_empty()) {
            return bad("S_used must not be empty");
        }
        if self.n_train < 2 || self.n_val == 0 || self.n_test == 0 {
            return bad("every split needs rows");
        }
        if !(self.snr > 0.0) || !(self.decay > 0.0) || !(self.readout_gain > 0.0) || self.max_coordinates == 0 {
            return bad("snr, decay, readout gain and coordinate count must be positive");
        }
        if let (Some(u), Some(e)) = (&self.used, &self.enc) {
            if u.iter().any(|f| e.contains(f)) {
                return bad("S_used and S_enc overlap");
            }
        }
        Ok(())
    }
}

/// What was planted where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub used: Vec<String>,
    pub enc: Vec<String>,
    /// Injection layer of every planted feature.
    pub layer: BTreeMap<String, usize>,
    /// Embedded coordinate count of every planted feature.
    pub coordinates: BTreeMap<String, usize>,
    /// Sign of each used feature in the label rule.
    pub sign: BTreeMap<String, f64>,
    /// Head-alignment floor the random selection finally satisfied; absent
    /// for explicit sets.
    pub alignment_floor: Option<f64>,
    /// Head alignment of every used feature.
    pub head_alignment: BTreeMap<String, f64>,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truth {
    Used,
    EncodedOnly,
    Absent,
}

impl PlantedTruth {
    pub fn truth(&self, feature: &str) -> Truth {
        if self.used.iter().any(|f| f == feature) {
            Truth::Used
        } else if self.enc.iter().any(|f| f == feature) {
            Truth::EncodedOnly
        } else {
            Truth::Absent
        }
    }
}

/// The linear remainder of a planted network, pure and thread-safe.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedModel {
    cell: String,
    /// `transforms[l]` maps layer `l` to `l + 1` (row convention).
    transforms: Vec<DMatrix<f64>>,
    /// Drive added at each layer, per split.
    drives: Vec<Splits<DMatrix<f64>>>,
    readout: DMatrix<f64>,
    activations: Vec<Splits<DMatrix<f64>>>,
    predictions: Splits<DMatrix<f64>>,
    row_ids: Splits<Vec<String>>,
}

impl PlantedModel {
    fn assemble(
        cell: String,
        transforms: Vec<DMatrix<f64>>,
        drives: Vec<Splits<DMatrix<f64>>>,
        readout: DMatrix<f64>,
        row_ids: Splits<Vec<String>>,
    ) -> Result<Self> {
        let mut activations: Vec<Splits<DMatrix<f64>>> = Vec::with_capacity(drives.len());
        activations.push(drives[0].map(|_, d| quantize_f32(d)));
        for l in 1..drives.len() {
            let next = activations[l - 1].map(|s, h| step(h, &transforms[l - 1], drives[l].get(s)));
            activations.push(next);
        }
        let last = activations.last().expect("at least one layer");
        let predictions = last.map(|_, h| quantize_f32(&(h * &readout)));
        Ok(Self {
            cell,
            transforms,
            drives,
            readout,
            activations,
            predictions,
            row_ids,
        })
    }

    pub fn row_ids(&self, split: Split) -> &[String] {
        self.row_ids.get(split)
    }

    /// Writes the parameters a separate process needs to serve edited
    /// forwards.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let d = self.readout.nrows();
        let unit_ids: Vec<String> = (0..d).map(|i| format!("unit-{i:04}")).collect();
        for (l, t) in self.transforms.iter().enumerate() {
            write_matrix(&dir.join(format!("transform_{l}.bin")), t, &unit_ids, None)?;
        }
        for (l, drive) in self.drives.iter().enumerate() {
            for s in Split::ALL {
                write_matrix(&dir.join(format!("drive_{l}_{s}.bin")), drive.get(s), self.row_ids.get(s), None)?;
            }
        }
        write_matrix(&dir.join("readout.bin"), &self.readout, &unit_ids, None)
    }

    /// Rebuilds a model saved with [`PlantedModel::save`] for the cell whose
    /// manifest is given.
    pub fn load(dir: &Path, manifest: &CellManifest) -> Result<Self> {
        let d = manifest.d_hidden;
        let unit_ids: Vec<String> = (0..d).map(|i| format!("unit-{i:04}")).collect();
        let row_ids = manifest.splits.map(|_, r| r.row_ids.clone());
        let transforms = (0..manifest.n_layers.saturating_sub(1))
            .map(|l| read_aligned(&dir.join(format!("transform_{l}.bin")), &unit_ids, "planted transform"))
            .collect::<Result<Vec<_>>>()?;
        let drives = (0..manifest.n_layers)
            .map(|l| row_ids.try_map(|s, ids| read_aligned(&dir.join(format!("drive_{l}_{s}.bin")), ids, "planted drive")))
            .collect::<Result<Vec<_>>>()?;
        let readout = read_aligned(&dir.join("readout.bin"), &unit_ids, "planted readout")?;
        Self::assemble(manifest.cell(), transforms, drives, readout, row_ids)
    }
}

fn step(h: &DMatrix<f64>, t: &DMatrix<f64>, drive: &DMatrix<f64>) -> DMatrix<f64> {
    quantize_f32(&(h * t + drive))
}

impl ModelAdapter for PlantedModel {
    fn cell(&self) -> String {
        self.cell.clone()
    }

    fn n_layers(&self) -> usize {
        self.activations.len()
    }

    fn activations(&self, layer: usize, split: Split) -> Result<DMatrix<f64>> {
        self.activations
            .get(layer)
            .map(|a| a.get(split).clone())
            .ok_or_else(|| Error::AdapterRefused {
                cell: self.cell.clone(),
                layer,
                reason: format!("model has {} layers", self.activations.len()),
            })
    }

    fn base_predictions(&self, split: Split) -> Result<DMatrix<f64>> {
        Ok(self.predictions.get(split).clone())
    }

    fn predict_from_layer(&self, layer: usize, edited: &DMatrix<f64>, split: Split) -> Result<DMatrix<f64>> {
        if layer >= self.activations.len() {
            return Err(Error::AdapterRefused {
                cell: self.cell.clone(),
                layer,
                reason: format!("model has {} layers", self.activations.len()),
            });
        }
        let base = self.drives[layer].get(split);
        if edited.shape() != base.shape() {
            return Err(Error::shape(
                format!("edited activations of layer {layer} split {split}"),
                format!("{}x{}", base.nrows(), base.ncols()),
                format!("{}x{}", edited.nrows(), edited.ncols()),
            ));
        }
        let mut h = edited.clone();
        for l in layer + 1..self.activations.len() {
            h = step(&h, &self.transforms[l - 1], self.drives[l].get(split));
        }
        Ok(quantize_f32(&(&h * &self.readout)))
    }
}

/// Serves offline edit requests from a planted model, in process.
pub struct PlantedResponder<'a> {
    pub model: &'a PlantedModel,
}

impl Responder for PlantedResponder<'_> {
    fn respond(&self, exchange_dir: &Path, request: &EditRequest) -> Result<()> {
        respond_with(self.model, exchange_dir, request)
    }
}

/// Answers one offline edit request: reads the edited activations, checks
/// the row digest and writes the predictions next to them.
pub fn respond_with(model: &PlantedModel, exchange_dir: &Path, request: &EditRequest) -> Result<()> {
    let ids = model.row_ids(request.split);
    let edited = read_aligned(&exchange_dir.join(&request.activations), ids, "edited activations")?;
    let preds = model.predict_from_layer(request.layer, &edited, request.split)?;
    write_matrix(&exchange_dir.join(&request.predictions), &preds, ids, None)
}

/// Everything a planted generation produces. Rows of `raw` and `features`
/// are train, then validation, then test.
#[derive(Debug, Clone)]
pub struct PlantedCell {
    pub spec: PlantedSpec,
    pub epochs: Splits<Vec<Epoch>>,
    pub raw: DMatrix<f64>,
    pub features: FeatureMatrix,
    pub manifest: CellManifest,
    pub cache: ActivationCache,
    pub model: PlantedModel,
    pub truth: PlantedTruth,
    /// Epochs regenerated because their features were not finite.
    pub regenerated: usize,
}

struct Coordinates {
    /// Whitened principal coordinates, all rows.
    values: DMatrix<f64>,
}

/// Share of variance the kept coordinates must reconstruct on the
/// validation rows; heavy-tailed features whose train components do not carry
/// over fail it.
const MIN_VAL_RECONSTRUCTION: f64 = 0.5;

/// Largest train kurtosis of a kept coordinate. A few extreme rows would
/// otherwise dominate every fit on the feature.
const MAX_KURTOSIS: f64 = 20.0;

/// Whitened leading principal coordinates of one feature's columns, fitted on
/// the train rows. `None` when the feature is too degenerate to plant.
fn principal_coordinates(z: &DMatrix<f64>, spec: &PlantedSpec) -> Option<Coordinates> {
    let (n_train, k_max) = (spec.n_train, spec.max_coordinates);
    let p = z.ncols();
    let train = z.rows(0, n_train);
    let mean = train.row_mean();
    let centred = DMatrix::from_fn(z.nrows(), p, |r, c| z[(r, c)] - mean[c]);
    let tc = centred.rows(0, n_train);
    let cov = tc.transpose() * tc / n_train as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let k = p.min(k_max);
    if !(total > 1e-9) {
        return None;
    }
    let mut values = DMatrix::zeros(z.nrows(), k);
    let mut loadings = DMatrix::zeros(p, k);
    for (j, &i) in order.iter().take(k).enumerate() {
        let lam = eig.eigenvalues[i];
        if lam < 0.01 * total {
            return None;
        }
        let mut v: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        // Deterministic orientation: largest-magnitude loading positive.
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v = -v;
        }
        let coord = &centred * &v / lam.sqrt();
        let m4 = coord.rows(0, n_train).iter().map(|x| x.powi(4)).sum::<f64>() / n_train as f64;
        if m4 > MAX_KURTOSIS {
            return None;
        }
        values.set_column(j, &coord);
        loadings.set_column(j, &v);
    }
    let val = centred.rows(n_train, spec.n_val);
    let resid = &val - &val * &loadings * loadings.transpose();
    let explained = 1.0 - resid.norm_squared() / val.norm_squared().max(1e-300);
    (explained >= MIN_VAL_RECONSTRUCTION).then_some(Coordinates { values })
}

/// Epochs with finite features, regenerating bounded times per row.
fn draw_epochs(spec: &PlantedSpec, cfg: &LexiconConfig) -> Result<(Vec<Epoch>, DMatrix<f64>, usize)> {
    let base = spec.seed("planted-epochs");
    let draw = |row: usize, attempt: usize| -> Result<Epoch> {
        let mut rng = base.with_purpose(&format!("planted-epochs-{row}-{attempt}")).rng();
        let mut planner = FftPlanner::new();
        synth_epoch(&spec.synth, &mut rng, &mut planner)
    };
    let mut epochs = (0..spec.n_rows())
        .into_par_iter()
        .map(|r| draw(r, 0))
        .collect::<Result<Vec<_>>>()?;
    let mut raw = compute_rows(&epochs, cfg)?.values;
    let mut regenerated = 0;
    for r in 0..epochs.len() {
        let mut attempt = 0;
        while raw.row(r).iter().any(|v| !v.is_finite()) {
            attempt += 1;
            if attempt > MAX_REGENERATIONS {
                return Err(Error::NonFinite {
                    context: format!("planted epoch {r} after {MAX_REGENERATIONS} regenerations"),
                });
            }
            warn!("planted epoch {r} has non-finite features, regenerating (attempt {attempt})");
            epochs[r] = draw(r, attempt)?;
            let row = compute_rows(std::slice::from_ref(&epochs[r]), cfg)?.values;
            raw.set_row(r, &row.row(0));
            regenerated += 1;
        }
    }
    Ok((epochs, raw, regenerated))
}

fn resolve(names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            crate::lexicon::feature_index(n)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown feature {n}")))
        })
        .collect()
}

struct Selection {
    used: Vec<usize>,
    enc: Vec<usize>,
    /// Alignment floor met by a random draw; `None` for explicit sets.
    floor: Option<f64>,
}

/// Pearson correlation over the first `n` rows.
fn train_corr(a: &DVector<f64>, b: &DVector<f64>, n: usize) -> f64 {
    let a: Vec<f64> = a.rows(0, n).iter().copied().collect();
    let b: Vec<f64> = b.rows(0, n).iter().copied().collect();
    crate::numeric::pearson(&a, &b).unwrap_or(0.0)
}

fn columns_of(z: &DMatrix<f64>, set: &[usize]) -> DMatrix<f64> {
    let layout = ColumnLayout::registry();
    let cols: Vec<usize> = set.iter().flat_map(|&q| layout.range(q)).collect();
    z.select_columns(&cols)
}

/// Every planted feature except `q`.
fn others(q: usize, used: &[usize], enc: &[usize]) -> Vec<usize> {
    used.iter().chain(enc).copied().filter(|&f| f != q).collect()
}

/// Train covariances for alignment screening: the columns among
/// themselves and each feature's first principal coordinate against them.
struct Gram {
    columns: DMatrix<f64>,
    pc1: Vec<Option<DVector<f64>>>,
}

impl Gram {
    fn new(z: &DMatrix<f64>, coords: &[Option<Coordinates>], n_train: usize) -> Self {
        let train = z.rows(0, n_train);
        let mean = train.row_mean();
        let centred = DMatrix::from_fn(n_train, z.ncols(), |r, c| train[(r, c)] - mean[c]);
        let scale = 1.0 / n_train as f64;
        let pc1 = coords
            .iter()
            .map(|c| {
                c.as_ref()
                    .map(|c| centred.transpose() * c.values.column(0).rows(0, n_train) * scale)
            })
            .collect();
        Self {
            columns: centred.transpose() * &centred * scale,
            pc1,
        }
    }

    /// Head alignment of `u` against the columns of `set`: the square root
    /// of one minus the train R² of its first principal coordinate.
    fn alignment(&self, u: usize, set: &[usize]) -> f64 {
        let layout = ColumnLayout::registry();
        let cols: Vec<usize> = set.iter().flat_map(|&q| layout.range(q)).collect();
        if cols.is_empty() {
            return 1.0;
        }
        let pc1 = self.pc1[u].as_ref().expect("plantable");
        let b = DVector::from_iterator(cols.len(), cols.iter().map(|&c| pc1[c]));
        let c = DMatrix::from_fn(cols.len(), cols.len(), |i, j| self.columns[(cols[i], cols[j])]);
        let r2 = c
            .svd(true, true)
            .solve(&b, 1e-10)
            .map_or(1.0, |x| b.dot(&x));
        (1.0 - r2).max(0.0).sqrt()
    }

    /// Smallest head alignment over `used` given the planted sets.
    fn min_alignment(&self, used: &[usize], enc: &[usize]) -> f64 {
        used.iter()
            .map(|&u| self.alignment(u, &others(u, used, enc)))
            .fold(1.0, f64::min)
    }
}

/// Greedy screening. `S_used` is filled first, in random order, with
/// features that keep every used feature's head alignment against the other
/// used features above the floor. `S_enc` is then filled best first: each
/// step takes the candidate that leaves the smallest used alignment largest,
/// as long as it stays above the floor. The floor relaxes in steps of 0.05
/// until both sets fill.
fn choose_planted(spec: &PlantedSpec, coords: &[Option<Coordinates>], z: &DMatrix<f64>) -> Result<Selection> {
    if let Some(used) = &spec.used {
        let used = resolve(used)?;
        let enc = resolve(spec.enc.as_deref().unwrap_or(&[]))?;
        for &q in used.iter().chain(&enc) {
            if coords[q].is_none() {
                return Err(Error::InvalidArgument(format!(
                    "feature {} is too degenerate to plant",
                    REGISTRY[q].id
                )));
            }
        }
        return Ok(Selection { used, enc, floor: None });
    }
    let gram = Gram::new(z, coords, spec.n_train);
    let mut order: Vec<usize> = (0..REGISTRY.len()).filter(|&q| coords[q].is_some()).collect();
    order.shuffle(&mut spec.seed("planted-selection").rng());
    let mut floor = spec.min_head_alignment;
    loop {
        let mut used: Vec<usize> = Vec::new();
        let mut enc: Vec<usize> = Vec::new();
        for &q in &order {
            if used.len() == spec.n_used {
                break;
            }
            let trial: Vec<usize> = used.iter().copied().chain([q]).collect();
            if gram.min_alignment(&trial, &enc) >= floor {
                used = trial;
            }
        }
        if used.len() == spec.n_used {
            while enc.len() < spec.n_enc {
                let best = order
                    .iter()
                    .filter(|q| !used.contains(q) && !enc.contains(q))
                    .map(|&q| {
                        let trial: Vec<usize> = enc.iter().copied().chain([q]).collect();
                        (q, gram.min_alignment(&used, &trial))
                    })
                    .fold(None, |best: Option<(usize, f64)>, (q, a)| match best {
                        Some((_, b)) if b >= a => best,
                        _ => Some((q, a)),
                    });
                match best {
                    Some((q, a)) if a >= floor => enc.push(q),
                    _ => break,
                }
            }
            if enc.len() == spec.n_enc {
                return Ok(Selection {
                    used,
                    enc,
                    floor: Some(floor),
                });
            }
        }
        if floor <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "only {} used and {} encoded-only plantable features for {} and {} requested",
                used.len(),
                enc.len(),
                spec.n_used,
                spec.n_enc
            )));
        }
        floor = (floor - 0.05).max(0.0);
    }
}

/// Least-squares residualisation on fixed regressors (with intercept),
/// fitted on the train rows and applied to all of them.
struct Residualiser {
    design: DMatrix<f64>,
    svd: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n_train: usize,
}

impl Residualiser {
    fn new(x: &DMatrix<f64>, n_train: usize) -> Self {
        let design = DMatrix::from_fn(x.nrows(), x.ncols() + 1, |r, c| if c == 0 { 1.0 } else { x[(r, c - 1)] });
        let svd = design.rows(0, n_train).into_owned().svd(true, true);
        Self { design, svd, n_train }
    }

    /// `y` minus its train-fitted projection, scaled to unit train variance.
    fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        let n = self.n_train;
        let beta = self
            .svd
            .solve(&y.rows(0, n).into_owned(), 1e-10)
            .unwrap_or_else(|_| DVector::zeros(self.design.ncols()));
        let r = y - &self.design * beta;
        let m = r.rows(0, n).mean();
        let sd = (r.rows(0, n).map(|v| (v - m).powi(2)).sum() / n as f64).sqrt();
        r.map(|v| (v - m) / sd.max(1e-12))
    }
}

fn split_rows(m: &DMatrix<f64>, spec: &PlantedSpec) -> Splits<DMatrix<f64>> {
    Splits {
        train: m.rows(0, spec.n_train).into_owned(),
        val: m.rows(spec.n_train, spec.n_val).into_owned(),
        test: m.rows(spec.n_train + spec.n_val, spec.n_test).into_owned(),
    }
}

/// Builds a planted cell. Deterministic in `spec`.
pub fn generate_planted(spec: &PlantedSpec) -> Result<PlantedCell> {
    spec.validate()?;
    let lex = LexiconConfig::default();
    let (epochs, raw, regenerated) = draw_epochs(spec, &lex)?;
    // Features go through disk as f32; fit on the values a reader will see.
    let raw = quantize_f32(&raw);
    let train_rows: Vec<usize> = (0..spec.n_train).collect();
    let features = FeatureMatrix::standardize(&raw, &train_rows)?;
    let layout = ColumnLayout::registry();

    let coords: Vec<Option<Coordinates>> = REGISTRY
        .iter()
        .enumerate()
        .map(|(q, _)| {
            let range = layout.range(q);
            let qc_ok = range.clone().all(|c| {
                let qc = &features.standardizer.qc[c];
                !qc.low_variance && qc.nonfinite_ratio == 0.0
            });
            if !qc_ok {
                return None;
            }
            let z = features.values.columns(range.start, range.len()).into_owned();
            principal_coordinates(&z, spec)
        })
        .collect();
    let Selection { used, enc, floor } = choose_planted(spec, &coords, &features.values)?;

    // Layer assignment: each set spread evenly over the layers, in a random
    // order.
    let mut rng = spec.seed("planted-layers").rng();
    let mut layer = BTreeMap::new();
    for set in [&used, &enc] {
        let mut slots: Vec<usize> = (0..set.len()).map(|i| i * spec.n_layers / set.len().max(1)).collect();
        slots.shuffle(&mut rng);
        for (&q, l) in set.iter().zip(slots) {
            layer.insert(REGISTRY[q].id.to_string(), l);
        }
    }

    // Embedded coordinates per planted feature, in block order.
    let n = spec.n_rows();
    let mut sign_rng = spec.seed("planted-signs").rng();
    let mut blocks: Vec<(usize, DMatrix<f64>)> = Vec::new();
    let mut sign = BTreeMap::new();
    let mut label_score = DVector::zeros(n);
    let mut head = Vec::new();
    let mut head_alignment = BTreeMap::new();
    let mut residualisers = Vec::new();
    for &q in &used {
        let c = &coords[q].as_ref().expect("chosen features are plantable").values;
        let s = if sign_rng.random_bool(0.5) { 1.0 } else { -1.0 };
        sign.insert(REGISTRY[q].id.to_string(), s);
        let mut block = c.clone();
        let oz = columns_of(&features.values, &others(q, &used, &enc));
        let pc1 = c.column(0).into_owned();
        let res = Residualiser::new(&oz, spec.n_train);
        head_alignment.insert(REGISTRY[q].id.to_string(), train_corr(&pc1, &res.apply(&pc1), spec.n_train));
        let readout = res.apply(&pc1);
        residualisers.push(res);
        label_score += &readout * s;
        block.set_column(0, &(readout * spec.readout_gain));
        head.push((blocks.len(), s));
        blocks.push((q, block));
    }
    for &q in &enc {
        blocks.push((q, coords[q].as_ref().expect("chosen features are plantable").values.clone()));
    }
    let total_dims: usize = blocks.iter().map(|(_, b)| b.ncols()).sum();
    if total_dims > spec.d_hidden {
        return Err(Error::InvalidArgument(format!(
            "{total_dims} embedded coordinates do not fit {} hidden units",
            spec.d_hidden
        )));
    }

    let d = spec.d_hidden;
    let frame = random_orthonormal(d, d, &spec.seed("planted-frame"))?;
    let noise_sd = (1.0 / spec.snr).sqrt();
    // Block offsets in the frame; the head reads the first column of each
    // used block.
    let offsets: Vec<usize> = blocks
        .iter()
        .scan(0, |o, (_, b)| {
            let start = *o;
            *o += b.ncols();
            Some(start)
        })
        .collect();
    let head_dirs: Vec<usize> = head.iter().map(|&(bi, _)| offsets[bi]).collect();
    // Gaussian noise in frame coordinates at the same SNR for every embedded
    // coordinate, so scaled by the readout gain along the head directions.
    // There each noise column is also residualised like the head coordinate
    // it sits on, so a head direction keeps exactly zero train
    // cross-covariance with every other planted feature at every layer.
    let mut noise_rng = spec.seed("planted-noise").rng();
    let mut latent_drives: Vec<DMatrix<f64>> = (0..spec.n_layers)
        .map(|_| {
            let mut g = DMatrix::from_fn(n, d, |_, _| {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                noise_sd * z
            });
            for (&c, res) in head_dirs.iter().zip(&residualisers) {
                let r = res.apply(&g.column(c).into_owned());
                g.set_column(c, &(r * noise_sd * spec.readout_gain));
            }
            g * frame.transpose()
        })
        .collect();
    let mut head_latent = DVector::zeros(d);
    let mut coordinates = BTreeMap::new();
    for (bi, (q, block)) in blocks.iter().enumerate() {
        let id = REGISTRY[*q].id;
        let l = layer[id];
        let dirs = frame.columns(offsets[bi], block.ncols());
        latent_drives[l] += block * dirs.transpose();
        coordinates.insert(id.to_string(), block.ncols());
        if let Some(&(_, s)) = head.iter().find(|(b, _)| *b == bi) {
            let depth = (spec.n_layers - 1 - l) as i32;
            head_latent += dirs.column(0) * (s / (spec.readout_gain * spec.decay.powi(depth)));
        }
    }

    // Per-layer rotations map the latent frame into each layer's basis.
    let rotations: Vec<DMatrix<f64>> = (0..spec.n_layers)
        .map(|l| random_orthonormal(d, d, &spec.seed(&format!("planted-rotation-{l}"))))
        .collect::<Result<_>>()?;
    let transforms: Vec<DMatrix<f64>> = (0..spec.n_layers - 1)
        .map(|l| quantize_f32(&(&rotations[l].transpose() * &rotations[l + 1] * spec.decay)))
        .collect();
    let drives: Vec<Splits<DMatrix<f64>>> = latent_drives
        .iter()
        .zip(&rotations)
        .map(|(ld, r)| split_rows(&quantize_f32(&(ld * r)), spec))
        .collect();
    let readout = quantize_f32(&DMatrix::from_column_slice(
        d,
        1,
        (rotations[spec.n_layers - 1].transpose() * head_latent).as_slice(),
    ));

    // Labels: logistic in the unit-variance used score.
    let norm = (used.len() as f64).sqrt();
    let mut label_rng = spec.seed("planted-labels").rng();
    let labels: Vec<usize> = label_score
        .iter()
        .map(|g| {
            let p = 1.0 / (1.0 + (-spec.label_sharpness * g / norm).exp());
            usize::from(label_rng.random::<f64>() < p)
        })
        .collect();
    let splits = Splits {
        train: SplitRows::new(Split::Train, labels[..spec.n_train].to_vec()),
        val: SplitRows::new(Split::Val, labels[spec.n_train..spec.n_train + spec.n_val].to_vec()),
        test: SplitRows::new(Split::Test, labels[spec.n_train + spec.n_val..].to_vec()),
    };
    let manifest = CellManifest {
        format: MANIFEST_FORMAT.into(),
        task: spec.task.clone(),
        model: spec.model.clone(),
        metric: MetricKind::for_classes(2),
        n_classes: 2,
        n_layers: spec.n_layers,
        d_hidden: d,
        splits,
    };
    let row_ids = manifest.splits.map(|_, r| r.row_ids.clone());
    let model = PlantedModel::assemble(manifest.cell(), transforms, drives, readout, row_ids)?;
    let cache = crate::io::cache_from_adapter(&manifest, &model)?;
    let name = |set: &[usize]| set.iter().map(|&q| REGISTRY[q].id.to_string()).collect::<Vec<_>>();
    let truth = PlantedTruth {
        used: name(&used),
        enc: name(&enc),
        layer,
        coordinates,
        sign,
        alignment_floor: floor,
        head_alignment,
        noise_sd,
    };
    let mut it = epochs.into_iter();
    let epochs = Splits {
        train: it.by_ref().take(spec.n_train).collect(),
        val: it.by_ref().take(spec.n_val).collect(),
        test: it.collect(),
    };
    Ok(PlantedCell {
        spec: spec.clone(),
        epochs,
        raw,
        features,
        manifest,
        cache,
        model,
        truth,
        regenerated,
    })
}

/// Writes a planted cell in the standard cell layout, plus the model
/// parameters and ground truth under `planted/`.
pub fn write_planted(paths: &CellPaths, cell: &PlantedCell) -> Result<()> {
    write_manifest(paths, &cell.manifest)?;
    write_cache(paths, &cell.cache)?;
    for s in Split::ALL {
        write_epochs(&paths.epochs(s), cell.epochs.get(s), &cell.manifest.splits.get(s).row_ids)?;
    }
    let features = FeatureOutcome {
        raw: split_rows(&cell.raw, &cell.spec),
        failures: Vec::new(),
    };
    write_features(paths, &cell.manifest, &features)?;
    let dir = paths.planted_dir();
    cell.model.save(&dir)?;
    write_json(&dir.join("spec.json"), &cell.spec)?;
    write_json(&dir.join("truth.json"), &cell.truth)
}

pub fn read_truth(paths: &CellPaths) -> Result<PlantedTruth> {
    read_json(&paths.planted_dir().join("truth.json"))
}

/// Counts of truth (rows: used, encoded-only, absent) against reported
/// status (columns: causal, encoded-only, not-encoded).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; 3]; 3],
}

impl Confusion {
    fn row(t: Truth) -> usize {
        match t {
            Truth::Used => 0,
            Truth::EncodedOnly => 1,
            Truth::Absent => 2,
        }
    }

    fn col(s: Status) -> usize {
        match s {
            Status::RepresentationCausal => 0,
            Status::EncodedOnly => 1,
            Status::NotEncoded => 2,
        }
    }

    pub fn get(&self, t: Truth, s: Status) -> usize {
        self.counts[Self::row(t)][Self::col(s)]
    }

    pub fn total(&self, t: Truth) -> usize {
        self.counts[Self::row(t)].iter().sum()
    }

    pub fn add(&mut self, other: &Confusion) {
        for r in 0..3 {
            for c in 0..3 {
                self.counts[r][c] += other.counts[r][c];
            }
        }
    }

    /// Share of used features reported causal.
    pub fn sensitivity(&self) -> f64 {
        self.get(Truth::Used, Status::RepresentationCausal) as f64 / self.total(Truth::Used).max(1) as f64
    }

    /// Share of encoded-only features reported causal.
    pub fn false_causal_rate(&self) -> f64 {
        self.get(Truth::EncodedOnly, Status::RepresentationCausal) as f64 / self.total(Truth::EncodedOnly).max(1) as f64
    }
}

/// Tallies reported statuses against the planted truth.
pub fn ground_truth_compare<'a>(
    reported: impl IntoIterator<Item = (&'a str, Status)>,
    truth: &PlantedTruth,
) -> Confusion {
    let mut c = Confusion::default();
    for (feature, status) in reported {
        c.counts[Confusion::row(truth.truth(feature))][Confusion::col(status)] += 1;
    }
    c
}

/// A pure random draw, exposed for tests that need independent targets.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}
