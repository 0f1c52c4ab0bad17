//! Task metrics, paired bootstrap, smoothed p-values, Benjamini–Hochberg and
//! the representation-causal decision.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::quantile_sorted;
use crate::seed::SeedContext;

/// Bootstrap resamples per contrast.
pub const N_RESAMPLES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    RocAuc,
    MacroF1,
}

impl MetricKind {
    pub fn for_classes(n_classes: usize) -> Self {
        if n_classes <= 2 {
            MetricKind::RocAuc
        } else {
            MetricKind::MacroF1
        }
    }
}

/// Positive-class score of each row: the last column for two-column (or
/// wider) binary output, the only column otherwise.
pub fn positive_scores(preds: &DMatrix<f64>) -> Vec<f64> {
    let c = preds.ncols() - 1;
    preds.column(c).iter().copied().collect()
}

/// Arg-max class of each row; ties go to the lower class index.
pub fn predicted_labels(preds: &DMatrix<f64>) -> Vec<usize> {
    preds
        .row_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// ROC-AUC via average ranks: the Mann–Whitney pair statistic with half
/// credit for tied scores.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("roc_auc rows", labels.len(), scores.len()));
    }
    let order = sort_order(scores);
    weighted_auc(scores, labels, &order, None)
        .ok_or_else(|| Error::MetricUndefined("roc_auc needs both classes".into()))
}

fn sort_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// AUC with per-row multiplicities, walking a precomputed ascending order.
fn weighted_auc(
    scores: &[f64],
    labels: &[usize],
    order: &[usize],
    weights: Option<&[u32]>,
) -> Option<f64> {
    let w = |i: usize| weights.map_or(1.0, |w| f64::from(w[i]));
    let (mut neg_below, mut num, mut pos_total) = (0.0, 0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (mut gp, mut gn) = (0.0, 0.0);
        while k < order.len() && scores[order[k]] == s {
            let i = order[k];
            if labels[i] == 1 {
                gp += w(i);
            } else {
                gn += w(i);
            }
            k += 1;
        }
        num += gp * (neg_below + 0.5 * gn);
        neg_below += gn;
        pos_total += gp;
    }
    (pos_total > 0.0 && neg_below > 0.0).then(|| num / (pos_total * neg_below))
}

/// Unweighted mean of per-class F1. A class with no true and no predicted
/// rows scores 0.
pub fn macro_f1(pred: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::shape("macro_f1 rows", labels.len(), pred.len()));
    }
    if let Some(&bad) = labels.iter().chain(pred).find(|&&c| c >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "class {bad} out of range for {n_classes} classes"
        )));
    }
    Ok(weighted_macro_f1(pred, labels, n_classes, None))
}

fn weighted_macro_f1(
    pred: &[usize],
    labels: &[usize],
    n_classes: usize,
    weights: Option<&[u32]>,
) -> f64 {
    let mut tp = vec![0.0; n_classes];
    let mut fp = vec![0.0; n_classes];
    let mut fneg = vec![0.0; n_classes];
    for (i, (&p, &y)) in pred.iter().zip(labels).enumerate() {
        let w = weights.map_or(1.0, |w| f64::from(w[i]));
        if p == y {
            tp[y] += w;
        } else {
            fp[p] += w;
            fneg[y] += w;
        }
    }
    let f1: f64 = (0..n_classes)
        .map(|c| {
            let denom = 2.0 * tp[c] + fp[c] + fneg[c];
            if denom > 0.0 {
                2.0 * tp[c] / denom
            } else {
                0.0
            }
        })
        .sum();
    f1 / n_classes as f64
}

/// Task metric of a prediction matrix.
pub fn task_metric(
    kind: MetricKind,
    preds: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
) -> Result<f64> {
    if preds.nrows() != labels.len() {
        return Err(Error::shape("prediction rows", labels.len(), preds.nrows()));
    }
    match kind {
        MetricKind::RocAuc => roc_auc(&positive_scores(preds), labels),
        MetricKind::MacroF1 => macro_f1(&predicted_labels(preds), labels, n_classes),
    }
}

/// A metric precomputed for fast evaluation on weighted resamples.
#[derive(Debug, Clone)]
pub struct ResampleMetric {
    kind: MetricKind,
    n_classes: usize,
    labels: Vec<usize>,
    scores: Vec<f64>,
    order: Vec<usize>,
    pred: Vec<usize>,
}

impl ResampleMetric {
    pub fn new(
        kind: MetricKind,
        preds: &DMatrix<f64>,
        labels: &[usize],
        n_classes: usize,
    ) -> Result<Self> {
        if preds.nrows() != labels.len() {
            return Err(Error::shape("prediction rows", labels.len(), preds.nrows()));
        }
        let (scores, order, pred) = match kind {
            MetricKind::RocAuc => {
                let s = positive_scores(preds);
                let o = sort_order(&s);
                (s, o, Vec::new())
            }
            MetricKind::MacroF1 => (Vec::new(), Vec::new(), predicted_labels(preds)),
        };
        Ok(Self {
            kind,
            n_classes,
            labels: labels.to_vec(),
            scores,
            order,
            pred,
        })
    }

    /// Metric on the full sample.
    pub fn full(&self) -> Option<f64> {
        self.eval(None)
    }

    /// Metric on a resample given as per-row multiplicities; `None` when the
    /// metric is undefined on that resample.
    pub fn eval(&self, counts: Option<&[u32]>) -> Option<f64> {
        match self.kind {
            MetricKind::RocAuc => weighted_auc(&self.scores, &self.labels, &self.order, counts),
            MetricKind::MacroF1 => Some(weighted_macro_f1(
                &self.pred,
                &self.labels,
                self.n_classes,
                counts,
            )),
        }
    }
}

/// Shared resample row indices for one analysis split.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapPlan {
    pub n_rows: usize,
    pub indices: Vec<Vec<u32>>,
    counts: Vec<Vec<u32>>,
    pub provenance: String,
}

impl BootstrapPlan {
    /// Draws `n_resamples` uniform with-replacement resamples of `n_rows`.
    pub fn new(n_rows: usize, n_resamples: usize, seed: &SeedContext) -> Result<Self> {
        if n_rows == 0 {
            return Err(Error::InvalidArgument("bootstrap over zero rows".into()));
        }
        let mut rng = seed.rng();
        let indices: Vec<Vec<u32>> = (0..n_resamples)
            .map(|_| (0..n_rows).map(|_| rng.random_range(0..n_rows as u32)).collect())
            .collect();
        let counts = indices
            .iter()
            .map(|idx| {
                let mut c = vec![0u32; n_rows];
                idx.iter().for_each(|&i| c[i as usize] += 1);
                c
            })
            .collect();
        Ok(Self {
            n_rows,
            indices,
            counts,
            provenance: seed.provenance(),
        })
    }

    pub fn n_resamples(&self) -> usize {
        self.indices.len()
    }

    pub fn counts(&self, b: usize) -> &[u32] {
        &self.counts[b]
    }

    /// SHA-256 over all resample indices, stored with each replicate set so
    /// pairing can be checked after the fact.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for idx in &self.indices {
            for i in idx {
                h.update(i.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Replicate deltas of one contrast; `None` marks an undefined resample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicates {
    pub plan_digest: String,
    pub deltas: Vec<Option<f64>>,
}

impl Replicates {
    pub fn valid(&self) -> Vec<f64> {
        self.deltas.iter().flatten().copied().collect()
    }

    pub fn b_eff(&self) -> usize {
        self.deltas.iter().flatten().count()
    }
}

/// Paired bootstrap of `M(base) − M(edited)` on shared resamples.
pub fn paired_bootstrap(
    base: &ResampleMetric,
    edited: &ResampleMetric,
    plan: &BootstrapPlan,
) -> Result<Replicates> {
    let deltas: Vec<Option<f64>> = (0..plan.n_resamples())
        .map(|b| {
            let c = plan.counts(b);
            Some(base.eval(Some(c))? - edited.eval(Some(c))?)
        })
        .collect();
    if deltas.iter().all(Option::is_none) {
        return Err(Error::MetricUndefined(
            "metric undefined on every bootstrap resample".into(),
        ));
    }
    Ok(Replicates {
        plan_digest: plan.digest(),
        deltas,
    })
}

/// Add-one smoothed p-value `(1 + #{δ ≤ 0}) / (1 + B_eff)`.
pub fn smoothed_p(valid: &[f64]) -> f64 {
    let nonpos = valid.iter().filter(|&&d| d <= 0.0).count();
    (1 + nonpos) as f64 / (1 + valid.len()) as f64
}

/// 2.5% and 97.5% percentiles (linear interpolation).
pub fn percentile_ci(valid: &[f64]) -> (f64, f64) {
    if valid.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut s = valid.to_vec();
    s.sort_by(f64::total_cmp);
    (quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    pub q: Vec<f64>,
    pub reject: Vec<bool>,
}

/// Benjamini–Hochberg step-up over one panel.
pub fn bh_fdr(p: &[f64], alpha: f64) -> BhResult {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut q = vec![1.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(m as f64 * p[i] / (rank + 1) as f64);
        q[i] = running.min(1.0);
    }
    let cutoff = (0..m)
        .rev()
        .find(|&rank| p[order[rank]] <= (rank + 1) as f64 / m as f64 * alpha);
    let mut reject = vec![false; m];
    if let Some(k) = cutoff {
        order[..=k].iter().for_each(|&i| reject[i] = true);
    }
    BhResult { q, reject }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    NotEncoded,
    EncodedOnly,
    RepresentationCausal,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::NotEncoded => "not-encoded",
            Status::EncodedOnly => "encoded-only",
            Status::RepresentationCausal => "representation-causal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalDecision {
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_smoothed: f64,
    pub q_bh: f64,
    pub delta_vs_random: f64,
    pub status: Status,
}

/// Significance level of the FDR condition.
pub const FDR_Q: f64 = 0.05;

/// The four-condition decision: encoded gate, positive CI lower endpoint,
/// BH q below the level, and an effect beyond the random-subspace control.
pub fn causal_criterion(
    selection_encoded: bool,
    ci: (f64, f64),
    p_smoothed: f64,
    q_bh: f64,
    delta_real: f64,
    delta_random: f64,
) -> CausalDecision {
    causal_criterion_at(selection_encoded, ci, p_smoothed, q_bh, delta_real, delta_random, FDR_Q)
}

/// [`causal_criterion`] at an explicit FDR level.
pub fn causal_criterion_at(
    selection_encoded: bool,
    ci: (f64, f64),
    p_smoothed: f64,
    q_bh: f64,
    delta_real: f64,
    delta_random: f64,
    level: f64,
) -> CausalDecision {
    let delta_vs_random = delta_real - delta_random;
    let status = if !selection_encoded {
        Status::NotEncoded
    } else if ci.0 > 0.0 && q_bh < level && delta_vs_random > 0.0 {
        Status::RepresentationCausal
    } else {
        Status::EncodedOnly
    };
    CausalDecision {
        ci_low: ci.0,
        ci_high: ci.1,
        p_smoothed,
        q_bh,
        delta_vs_random,
        status,
    }
}
