//! Cross-covariance subspace erasure, null-target controls and the residual
//! probe.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adapter::{ModelAdapter, Split};
use crate::error::{Error, Result};
use crate::probe::LayerBank;
use crate::seed::SeedContext;
use crate::stats::{task_metric, MetricKind};

/// Relative singular-value threshold factor.
pub const SIGMA_REL: f64 = 1e-4;

/// Projection `h ↦ h − (h − μ) U Uᵀ` onto the complement of `span(U)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eraser {
    pub mu: DVector<f64>,
    /// Orthonormal columns `d × r`.
    pub basis: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// No direction cleared the threshold, so the top components were kept.
    pub fallback: bool,
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

fn centered(m: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] - mu[c])
}

/// Flips each column so that its largest-magnitude entry is positive.
fn fix_signs(u: &mut DMatrix<f64>) {
    for mut col in u.column_iter_mut() {
        let mut k = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[k].abs() {
                k = i;
            }
        }
        if col[k] < 0.0 {
            col.neg_mut();
        }
    }
}

impl Eraser {
    /// Rank-zero eraser: `apply` returns its input unchanged.
    pub fn identity(d: usize) -> Self {
        Self {
            mu: DVector::zeros(d),
            basis: DMatrix::zeros(d, 0),
            singular_values: Vec::new(),
            fallback: false,
        }
    }

    /// Left singular subspace of the train cross-covariance
    /// `Σ_hz = (H − μ_h)ᵀ(Z − μ_z)/n`.
    pub fn fit(h: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Self> {
        Self::fit_with(h, z, SIGMA_REL)
    }

    /// [`Eraser::fit`] with the relative singular value threshold given.
    pub fn fit_with(h: &DMatrix<f64>, z: &DMatrix<f64>, sigma_rel: f64) -> Result<Self> {
        if h.nrows() != z.nrows() {
            return Err(Error::shape("eraser rows", h.nrows(), z.nrows()));
        }
        if h.nrows() == 0 {
            return Err(Error::EmptyTrain("eraser fit".into()));
        }
        let mu = column_means(h);
        let hc = centered(h, &mu);
        let zc = centered(z, &column_means(z));
        let sigma = hc.transpose() * zc / h.nrows() as f64;
        let svd = sigma.svd(true, false);
        let u_full = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let s_max = sv.first().copied().unwrap_or(0.0);
        let tau = sigma_rel * s_max.max(1.0);
        let mut keep = sv.iter().take_while(|&&s| s > tau).count();
        let fallback = keep == 0;
        if fallback {
            keep = sv.len();
        }
        let mut basis = DMatrix::from_fn(h.ncols(), keep, |r, c| u_full[(r, order[c])]);
        fix_signs(&mut basis);
        Ok(Self {
            mu,
            basis,
            singular_values: sv[..keep].to_vec(),
            fallback,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn apply(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank() == 0 {
            return h.clone();
        }
        let hc = centered(h, &self.mu);
        h - (hc * &self.basis) * self.basis.transpose()
    }

    /// The projector `U Uᵀ`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

/// Orthonormal `d × p` basis from the QR factor of a Gaussian matrix, with
/// `R`'s diagonal made positive.
pub fn random_orthonormal(d: usize, p: usize, seed: &SeedContext) -> Result<DMatrix<f64>> {
    if p > d {
        return Err(Error::InvalidArgument(format!(
            "random subspace of dimension {p} exceeds hidden size {d}"
        )));
    }
    let mut rng = seed.rng();
    let g = DMatrix::from_fn(d, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullControls {
    pub random: Eraser,
    pub shuffled: Eraser,
    pub gaussian: Eraser,
}

/// The three null-target erasers of one feature.
pub fn null_controls(h: &DMatrix<f64>, z: &DMatrix<f64>, seed: &SeedContext) -> Result<NullControls> {
    null_controls_with(h, z, seed, SIGMA_REL)
}

pub fn null_controls_with(h: &DMatrix<f64>, z: &DMatrix<f64>, seed: &SeedContext, sigma_rel: f64) -> Result<NullControls> {
    let p_q = z.ncols();
    let random = Eraser {
        mu: column_means(h),
        basis: random_orthonormal(h.ncols(), p_q, &seed.with_purpose("erase-random"))?,
        singular_values: Vec::new(),
        fallback: false,
    };
    let mut idx: Vec<usize> = (0..z.nrows()).collect();
    idx.shuffle(&mut seed.with_purpose("erase-shuffled").rng());
    let shuffled = Eraser::fit_with(h, &z.select_rows(&idx), sigma_rel)?;
    let mut rng = seed.with_purpose("erase-gaussian").rng();
    let g = DMatrix::from_fn(z.nrows(), p_q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gaussian = Eraser::fit_with(h, &g, sigma_rel)?;
    Ok(NullControls {
        random,
        shuffled,
        gaussian,
    })
}

/// Residual-probe pass threshold `max(0.02, 0.35 · max(R_probe, 0.04))`.
pub fn residual_threshold(r_probe: f64) -> f64 {
    0.02f64.max(0.35 * r_probe.max(0.04))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualProbe {
    pub r2: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Refits the ridge probe on erased activations and scores validation.
pub fn residual_probe(
    eraser: &Eraser,
    h: (&DMatrix<f64>, &DMatrix<f64>),
    z: (&DMatrix<f64>, &DMatrix<f64>),
    r_probe: f64,
) -> Result<ResidualProbe> {
    let train = eraser.apply(h.0);
    let val = eraser.apply(h.1);
    let empty = DMatrix::zeros(0, h.0.ncols());
    let bank = LayerBank::new(&train, &val, &empty)?;
    let fit = bank.fit_select(z.0, z.1, &DMatrix::zeros(0, z.0.ncols()));
    let threshold = residual_threshold(r_probe);
    Ok(ResidualProbe {
        r2: fit.val.score,
        threshold,
        pass: fit.val.score < threshold,
    })
}

/// Edited predictions at `layer` for `split`.
pub fn edited_predictions(
    adapter: &dyn ModelAdapter,
    layer: usize,
    eraser: &Eraser,
    split: Split,
) -> Result<DMatrix<f64>> {
    let h = adapter.activations(layer, split)?;
    adapter.predict_from_layer(layer, &eraser.apply(&h), split)
}

/// Task metric of the edited model on `split`.
pub fn edited_metric(
    adapter: &dyn ModelAdapter,
    layer: usize,
    eraser: &Eraser,
    split: Split,
    kind: MetricKind,
    labels: &[usize],
    n_classes: usize,
) -> Result<f64> {
    let preds = edited_predictions(adapter, layer, eraser, split)?;
    task_metric(kind, &preds, labels, n_classes)
}
