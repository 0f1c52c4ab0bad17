//! Transparent surrogate blocks, the class-weighted logistic classifier and
//! the closure ratio.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{ColumnLayout, Family, REGISTRY};
use crate::seed::SeedContext;
use crate::stats::{task_metric, MetricKind};

/// Denominator guard of the closure ratio.
pub const CLOSURE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l2: f64,
    pub step: f64,
    pub max_iter: usize,
    pub history: usize,
    /// Stop once the largest gradient entry falls below this.
    pub grad_tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            step: 0.8,
            max_iter: 120,
            history: 10,
            grad_tol: 1e-9,
        }
    }
}

/// Train mean/std scaling for surrogate blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl BlockScaler {
    /// Non-finite train entries are ignored; std below 1e-6 maps to 1.
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let (mut mean, mut scale) = (Vec::new(), Vec::new());
        for c in x.column_iter() {
            let v: Vec<f64> = c.iter().copied().filter(|a| a.is_finite()).collect();
            if v.is_empty() {
                mean.push(0.0);
                scale.push(1.0);
                continue;
            }
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64).sqrt();
            mean.push(m);
            scale.push(if sd < 1e-6 { 1.0 } else { sd });
        }
        Self { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            let z = (x[(r, c)] - self.mean[c]) / self.scale[c];
            if z.is_finite() {
                z
            } else {
                0.0
            }
        })
    }
}

/// Softmax regression on a standardised block.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub scaler: BlockScaler,
    pub iterations: usize,
}

impl LogisticModel {
    /// Class probabilities, rows × classes.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        softmax_rows(&logits(&self.scaler.apply(x), &self.weights, &self.bias))
    }
}

fn logits(x: &DMatrix<f64>, w: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let mut z = x * w;
    for mut row in z.row_iter_mut() {
        row += b.transpose();
    }
    z
}

fn softmax_rows(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = z.clone();
    for mut row in p.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Inverse class frequencies `n / (K · n_c)` (0 for an absent class).
pub fn class_weights(y: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    y.iter().for_each(|&c| counts[c] += 1);
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                y.len() as f64 / (n_classes * c) as f64
            }
        })
        .collect()
}

struct Objective<'a> {
    x: &'a DMatrix<f64>,
    onehot: DMatrix<f64>,
    w: Vec<f64>,
    w_sum: f64,
    l2: f64,
    p: usize,
    k: usize,
}

impl Objective<'_> {
    fn unpack(&self, theta: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let (p, k) = (self.p, self.k);
        let w = DMatrix::from_column_slice(p, k, &theta.as_slice()[..p * k]);
        let b = DVector::from_column_slice(&theta.as_slice()[p * k..]);
        (w, b)
    }

    fn eval(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let (wm, b) = self.unpack(theta);
        let z = logits(self.x, &wm, &b);
        let prob = softmax_rows(&z);
        let mut loss = 0.0;
        let mut resid = prob.clone() - &self.onehot;
        for (i, mut row) in resid.row_iter_mut().enumerate() {
            let zi = z.row(i);
            let m = zi.max();
            let lse = m + zi.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let zy: f64 = zi.iter().zip(self.onehot.row(i).iter()).map(|(a, o)| a * o).sum();
            loss += self.w[i] * (lse - zy);
            row *= self.w[i] / self.w_sum;
        }
        loss = loss / self.w_sum + 0.5 * self.l2 * wm.norm_squared();
        let gw = self.x.transpose() * &resid + &wm * self.l2;
        let gb: Vec<f64> = resid.column_iter().map(|c| c.sum()).collect();
        let mut g = DVector::zeros(theta.len());
        g.as_mut_slice()[..self.p * self.k].copy_from_slice(gw.as_slice());
        g.as_mut_slice()[self.p * self.k..].copy_from_slice(&gb);
        (loss, g)
    }
}

/// L-BFGS starting each iteration at step `cfg.step` along the two-loop
/// direction and halving it until the loss decreases enough (Armijo,
/// c = 1e-4). A direction that is not a descent direction resets the
/// history. Stops when no halving up to 2^-30 helps.
fn lbfgs(obj: &Objective<'_>, n_params: usize, cfg: &LogisticConfig) -> (DVector<f64>, usize) {
    let mut theta = DVector::zeros(n_params);
    let (mut loss, mut g) = obj.eval(&theta);
    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut iters = 0;
    for it in 0..cfg.max_iter {
        if g.amax() < cfg.grad_tol {
            break;
        }
        let mut q = g.clone();
        let mut alpha = vec![0.0; s_hist.len()];
        for j in (0..s_hist.len()).rev() {
            let rho = 1.0 / y_hist[j].dot(&s_hist[j]);
            alpha[j] = rho * s_hist[j].dot(&q);
            q.axpy(-alpha[j], &y_hist[j], 1.0);
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => s.dot(y) / y.dot(y),
            _ => 1.0,
        };
        let mut r = q * gamma;
        for j in 0..s_hist.len() {
            let rho = 1.0 / y_hist[j].dot(&s_hist[j]);
            let beta = rho * y_hist[j].dot(&r);
            r.axpy(alpha[j] - beta, &s_hist[j], 1.0);
        }
        let mut dir = -r;
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            dir = -g.clone();
            slope = -g.norm_squared();
        }
        let mut t = cfg.step;
        let mut accepted = None;
        for _ in 0..=30 {
            let next = &theta + &dir * t;
            let (l, gn) = obj.eval(&next);
            if l.is_finite() && l <= loss + 1e-4 * t * slope {
                accepted = Some((next, l, gn));
                break;
            }
            t *= 0.5;
        }
        let Some((next, l, g_next)) = accepted else { break };
        let step = &next - &theta;
        let y = &g_next - &g;
        if step.dot(&y) > 1e-12 {
            s_hist.push(step);
            y_hist.push(y);
            if s_hist.len() > cfg.history {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        theta = next;
        loss = l;
        g = g_next;
        iters = it + 1;
    }
    (theta, iters)
}

/// Class-weighted multinomial logistic regression on `x` (standardised
/// internally). `sample_weights = None` uses inverse class frequencies.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[usize],
    n_classes: usize,
    sample_weights: Option<&[f64]>,
    cfg: &LogisticConfig,
) -> Result<LogisticModel> {
    if x.nrows() != y.len() {
        return Err(Error::shape("logistic rows", y.len(), x.nrows()));
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyTrain("logistic fit".into()));
    }
    if y.iter().any(|&c| c >= n_classes) {
        return Err(Error::InvalidArgument("label out of range".into()));
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(Error::SingleClass("logistic fit".into()));
    }
    let scaler = BlockScaler::fit(x);
    let xs = scaler.apply(x);
    let w: Vec<f64> = match sample_weights {
        Some(w) => w.to_vec(),
        None => {
            let cw = class_weights(y, n_classes);
            y.iter().map(|&c| cw[c]).collect()
        }
    };
    let onehot = DMatrix::from_fn(y.len(), n_classes, |i, c| f64::from(u8::from(y[i] == c)));
    let obj = Objective {
        x: &xs,
        onehot,
        w_sum: w.iter().sum(),
        w,
        l2: cfg.l2,
        p: x.ncols(),
        k: n_classes,
    };
    let (theta, iterations) = lbfgs(&obj, (x.ncols() + 1) * n_classes, cfg);
    let (weights, bias) = obj.unpack(&theta);
    Ok(LogisticModel {
        weights,
        bias,
        scaler,
        iterations,
    })
}

/// `(M(rep) − M(rand)) / (M(fm) − M(rand) + ε)`; `None` when the
/// denominator is within ε of zero.
pub fn closure_ratio(rep: f64, rand: f64, fm: f64) -> Option<f64> {
    let denom = fm - rand;
    (denom.abs() > CLOSURE_EPS).then(|| (rep - rand) / (denom + CLOSURE_EPS))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    B0,
    Ball,
    Benc,
    Brep,
    Bfam,
    Brand,
}

impl BlockKind {
    pub const ALL: [BlockKind; 6] = [
        BlockKind::B0,
        BlockKind::Ball,
        BlockKind::Benc,
        BlockKind::Brep,
        BlockKind::Bfam,
        BlockKind::Brand,
    ];
}

/// Train and test rows of the standardised-or-raw feature matrix.
pub struct ClosureData<'a> {
    pub train_x: &'a DMatrix<f64>,
    pub train_y: &'a [usize],
    pub test_x: &'a DMatrix<f64>,
    pub test_y: &'a [usize],
    pub n_classes: usize,
    pub kind: MetricKind,
}

/// Selected features of a cell feeding the surrogate blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureSelection {
    pub test_encoded: Vec<usize>,
    pub causal: Vec<usize>,
    /// Δ_erase of every registry feature (0 where undefined).
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureRecord {
    pub b0: f64,
    pub ball: f64,
    pub benc: f64,
    pub brep: f64,
    pub bfam: f64,
    pub brand: f64,
    pub fm: f64,
    pub rc_count: usize,
    pub brep_columns: usize,
    pub ratio: Option<f64>,
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    /// Closure ratio with one family removed from B_rep, in family order.
    pub leave_one_family_out: Vec<(Family, Option<f64>)>,
    pub matched_dimension: Option<f64>,
    pub matched_features: Vec<String>,
    pub top_k: Option<f64>,
    pub top_k_changed: bool,
}

fn block_columns(features: &[usize]) -> Vec<usize> {
    ColumnLayout::registry().columns_of(features)
}

fn gaussian_block(rows: usize, cols: usize, seed: &SeedContext) -> DMatrix<f64> {
    let mut rng = seed.rng();
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Fits the surrogate on train columns and scores test.
pub fn block_metric(data: &ClosureData<'_>, train: &DMatrix<f64>, test: &DMatrix<f64>, cfg: &LogisticConfig) -> Result<f64> {
    let model = fit_logistic(train, data.train_y, data.n_classes, None, cfg)?;
    task_metric(data.kind, &model.predict_proba(test), data.test_y, data.n_classes)
}

fn feature_block_metric(data: &ClosureData<'_>, features: &[usize], cfg: &LogisticConfig) -> Result<f64> {
    if features.is_empty() {
        let z = |n| DMatrix::zeros(n, 1);
        return block_metric(data, &z(data.train_x.nrows()), &z(data.test_x.nrows()), cfg);
    }
    let cols = block_columns(features);
    block_metric(data, &data.train_x.select_columns(&cols), &data.test_x.select_columns(&cols), cfg)
}

/// Random block with `cols` columns (at least one) on train and test.
fn random_block_metric(data: &ClosureData<'_>, cols: usize, seed: &SeedContext, cfg: &LogisticConfig) -> Result<f64> {
    let cols = cols.max(1);
    let train = gaussian_block(data.train_x.nrows(), cols, &seed.with_purpose("brand-train"));
    let test = gaussian_block(data.test_x.nrows(), cols, &seed.with_purpose("brand-test"));
    block_metric(data, &train, &test, cfg)
}

fn families_with(features: &[usize]) -> Vec<Family> {
    Family::ALL
        .into_iter()
        .filter(|f| features.iter().any(|&q| REGISTRY[q].family == *f))
        .collect()
}

/// Runs all six blocks for one cell. An empty B_rep turns into a single zero
/// column and B_rand into a single Gaussian column.
pub fn closure_cell(
    data: &ClosureData<'_>,
    sel: &ClosureSelection,
    fm: f64,
    seed: &SeedContext,
    cfg: &LogisticConfig,
) -> Result<ClosureRecord> {
    let all: Vec<usize> = (0..REGISTRY.len()).collect();
    let fams = families_with(&sel.causal);
    let fam_features: Vec<usize> = all
        .iter()
        .copied()
        .filter(|&q| fams.contains(&REGISTRY[q].family))
        .collect();
    let brep_columns = block_columns(&sel.causal).len();
    let b0 = feature_block_metric(data, &[0, 1, 2, 3, 4], cfg)?;
    let ball = feature_block_metric(data, &all, cfg)?;
    let benc = feature_block_metric(data, &sel.test_encoded, cfg)?;
    let brep = feature_block_metric(data, &sel.causal, cfg)?;
    let bfam = feature_block_metric(data, &fam_features, cfg)?;
    let brand = random_block_metric(data, brep_columns, seed, cfg)?;
    let ratio = closure_ratio(brep, brand, fm);
    Ok(ClosureRecord {
        b0,
        ball,
        benc,
        brep,
        bfam,
        brand,
        fm,
        rc_count: sel.causal.len(),
        brep_columns,
        undefined: ratio.is_none(),
        ratio,
    })
}

/// Per-family top-K restriction by Δ, ties broken by registry order.
pub fn top_k_per_family(features: &[usize], delta: &[f64], k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for fam in Family::ALL {
        let mut members: Vec<usize> = features
            .iter()
            .copied()
            .filter(|&q| REGISTRY[q].family == fam)
            .collect();
        members.sort_by(|&a, &b| delta[b].total_cmp(&delta[a]).then(a.cmp(&b)));
        members.truncate(k);
        out.extend(members);
    }
    out.sort_unstable();
    out
}

/// Sensitivity variants refitting only the surrogate; B_rand and FM are held
/// at their base values.
pub fn sensitivity_suite(
    data: &ClosureData<'_>,
    sel: &ClosureSelection,
    base: &ClosureRecord,
    seed: &SeedContext,
    top_k: usize,
    cfg: &LogisticConfig,
) -> Result<SensitivityRecord> {
    let ratio_of = |features: &[usize]| -> Result<Option<f64>> {
        let m = feature_block_metric(data, features, cfg)?;
        Ok(closure_ratio(m, base.brand, base.fm))
    };
    let mut leave_one_family_out = Vec::new();
    for fam in Family::ALL {
        let kept: Vec<usize> = sel
            .causal
            .iter()
            .copied()
            .filter(|&q| REGISTRY[q].family != fam)
            .collect();
        let r = if kept.len() == sel.causal.len() {
            base.ratio
        } else {
            ratio_of(&kept)?
        };
        leave_one_family_out.push((fam, r));
    }

    let mut rng = seed.with_purpose("matched-dimension").rng();
    let mut matched: Vec<usize> = sample(&mut rng, REGISTRY.len(), sel.causal.len()).into_vec();
    matched.sort_unstable();
    let matched_dimension = ratio_of(&matched)?;

    let restricted = top_k_per_family(&sel.causal, &sel.delta, top_k);
    let top_k_changed = restricted.len() != sel.causal.len();
    let top_k = if top_k_changed {
        ratio_of(&restricted)?
    } else {
        base.ratio
    };
    Ok(SensitivityRecord {
        leave_one_family_out,
        matched_dimension,
        matched_features: matched.iter().map(|&q| REGISTRY[q].id.to_owned()).collect(),
        top_k,
        top_k_changed,
    })
}
