//! The 63-feature lexicon: registry, per-epoch families, aggregation and
//! train-fitted standardisation.

mod aggregate;
mod families;
mod registry;
mod standardize;

pub use aggregate::aggregate;
pub use families::{
    amplitude_coupling, channel_pairs, compute_family_c, compute_family_f, compute_family_r,
    compute_family_t, compute_family_tf, compute_family_x, default_tau_max, dfa_exponent,
    envelope_cv, kurtosis, modulation_index, permutation_entropy, phase_lag_index,
    FamilyValues, RelationValues, EIGEN_FLOOR, ENVELOPE_FLOOR, MI_BINS, POWER_FLOOR,
};
pub use registry::{
    family_members, feature_index, ColumnLayout, ColumnMeta, Family, FeatureSpec, Scope,
    CHANNEL_STATS, PAIR_STATS, REGISTRY,
};
pub use standardize::{SPREAD_FLOOR, ColumnQc, ColumnScaler, FeatureMatrix, ScaleMethod, Standardizer};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signal::{BandSet, Epoch};

/// Lexicon settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconConfig {
    /// Maximum ACF lag for C006/C007; `None` means a quarter of the epoch.
    pub tau_max: Option<usize>,
}

/// Raw family values of one epoch, before aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochFeatures {
    /// Channels × 49 per-channel features in registry order.
    pub channel: DMatrix<f64>,
    /// R001–R004.
    pub global: Vec<f64>,
    /// Pairs × R005–R014.
    pub pair: DMatrix<f64>,
    /// Guard hits per registry feature.
    pub guard_hits: Vec<usize>,
}

impl EpochFeatures {
    /// Expansion columns in registry order.
    pub fn expand(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(ColumnLayout::registry().n_columns());
        let (mut ch, mut gl, mut pr) = (0, 0, 0);
        for spec in &REGISTRY {
            match spec.scope {
                Scope::PerChannel => {
                    let col: Vec<f64> = self.channel.column(ch).iter().copied().collect();
                    out.extend(aggregate(&col, Scope::PerChannel));
                    ch += 1;
                }
                Scope::Global => {
                    out.push(self.global[gl]);
                    gl += 1;
                }
                Scope::PerPair => {
                    let col: Vec<f64> = self.pair.column(pr).iter().copied().collect();
                    out.extend(aggregate(&col, Scope::PerPair));
                    pr += 1;
                }
            }
        }
        out
    }
}

/// Computes all six families for one epoch with shared spectra.
pub fn compute_epoch(epoch: &Epoch, config: &LexiconConfig) -> EpochFeatures {
    let bands = BandSet::for_epoch(epoch);
    let views = families::channel_views(epoch, &bands);
    let fs = epoch.fs();
    let parts = [
        compute_family_t(epoch),
        families::family_f_views(&views, &bands, fs),
        families::family_tf_views(&views),
        compute_family_c(epoch, config.tau_max),
        families::family_x_views(&views),
    ];
    let n_ch = epoch.n_channels();
    let width: usize = parts.iter().map(|p| p.values.ncols()).sum();
    let mut channel = DMatrix::zeros(n_ch, width);
    let mut guard_hits = Vec::with_capacity(REGISTRY.len());
    let mut offset = 0;
    for p in &parts {
        channel
            .view_mut((0, offset), (n_ch, p.values.ncols()))
            .copy_from(&p.values);
        offset += p.values.ncols();
        guard_hits.extend(&p.guard_hits);
    }
    let r = families::family_r_views(&views, &bands, fs);
    guard_hits.extend(&r.guard_hits);
    EpochFeatures {
        channel,
        global: r.global,
        pair: r.pairs,
        guard_hits,
    }
}

/// Expanded features of many epochs, one row per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub values: DMatrix<f64>,
    /// Fraction of (epoch, channel-or-pair) evaluations that hit a guard, per
    /// registry feature.
    pub guard_rate: Vec<f64>,
}

/// Computes expanded features for a batch of epochs in parallel; row order
/// follows the input.
pub fn compute_rows(epochs: &[Epoch], config: &LexiconConfig) -> Result<RawFeatures> {
    let layout = ColumnLayout::registry();
    let rows: Vec<(Vec<f64>, Vec<usize>, usize, usize)> = epochs
        .par_iter()
        .map(|e| {
            let f = compute_epoch(e, config);
            let n = e.n_channels();
            (f.expand(), f.guard_hits, n, n * n.saturating_sub(1) / 2)
        })
        .collect();
    let mut values = DMatrix::zeros(epochs.len(), layout.n_columns());
    let mut hits = vec![0.0; REGISTRY.len()];
    let mut evals = vec![0.0; REGISTRY.len()];
    for (i, (row, g, n_ch, n_pairs)) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            values[(i, j)] = *v;
        }
        for (q, spec) in REGISTRY.iter().enumerate() {
            hits[q] += g[q] as f64;
            evals[q] += match spec.scope {
                Scope::PerChannel => *n_ch,
                Scope::PerPair => (*n_pairs).max(1),
                Scope::Global => 1,
            } as f64;
        }
    }
    let guard_rate = hits
        .iter()
        .zip(&evals)
        .map(|(h, e)| if *e > 0.0 { (h / e).min(1.0) } else { 0.0 })
        .collect();
    Ok(RawFeatures { values, guard_rate })
}
