//! Layer-wise ridge probes, control probes and the encoding criterion.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedContext;

/// Ridge penalties searched on validation.
pub const LAMBDA_GRID: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

/// Per-column train mean and standard deviation (zero spread maps to 1).
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaler {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl InputScaler {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
        let scale = DVector::from_iterator(
            x.ncols(),
            x.column_iter().zip(mean.iter()).map(|(c, m)| {
                let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            }),
        );
        Self { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            (x[(r, c)] - self.mean[c]) / self.scale[c]
        })
    }
}

/// Linear probe on standardised inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeProbe {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub lambda: f64,
    pub scaler: InputScaler,
}

impl RidgeProbe {
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        predict_standardized(&self.scaler.apply(x), &self.weights, &self.bias)
    }
}

fn predict_standardized(xs: &DMatrix<f64>, w: &DMatrix<f64>, bias: &DVector<f64>) -> DMatrix<f64> {
    let mut p = xs * w;
    for mut row in p.row_iter_mut() {
        row += bias.transpose();
    }
    p
}

fn check_rows(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::shape("probe rows", x.nrows(), y.nrows()));
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyTrain("ridge probe".into()));
    }
    Ok(())
}

fn gram_factor(xs: &DMatrix<f64>, lambda: f64) -> Result<Cholesky<f64, Dyn>> {
    let d = xs.ncols();
    let g = xs.transpose() * xs + DMatrix::identity(d, d) * lambda;
    Cholesky::new(g).ok_or_else(|| Error::InvalidArgument("ridge Gram not positive definite".into()))
}

/// Row filter: keeps rows whose inputs and targets are all finite.
pub fn finite_rows(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Vec<usize> {
    (0..x.nrows())
        .filter(|&r| x.row(r).iter().chain(y.row(r).iter()).all(|v| v.is_finite()))
        .collect()
}

/// Closed-form ridge on train-standardised `x` and centred `y`.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<RidgeProbe> {
    check_rows(x, y)?;
    let keep = finite_rows(x, y);
    if keep.is_empty() {
        return Err(Error::EmptyTrain("ridge probe after filtering".into()));
    }
    let (x, y) = if keep.len() == x.nrows() {
        (x.clone(), y.clone())
    } else {
        (x.select_rows(&keep), y.select_rows(&keep))
    };
    let scaler = InputScaler::fit(&x);
    let xs = scaler.apply(&x);
    let (yc, bias) = center(&y);
    let weights = gram_factor(&xs, lambda)?.solve(&(xs.transpose() * yc));
    Ok(RidgeProbe {
        weights,
        bias,
        lambda,
        scaler,
    })
}

/// Ridge without centring or scaling: solves `(XᵀX + λI) w = XᵀY`.
pub fn fit_ridge_uncentered(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    check_rows(x, y)?;
    Ok(gram_factor(x, lambda)?.solve(&(x.transpose() * y)))
}

fn center(y: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = y.nrows() as f64;
    let mean = DVector::from_iterator(y.ncols(), y.column_iter().map(|c| c.sum() / n));
    let yc = DMatrix::from_fn(y.nrows(), y.ncols(), |r, c| y[(r, c)] - mean[c]);
    (yc, mean)
}

/// Clipped, averaged coefficient of determination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Score {
    pub score: f64,
    /// Per-output R² clipped at zero.
    pub per_output: Vec<f64>,
    /// Outputs whose evaluation targets have zero variance.
    pub zero_variance: Vec<bool>,
}

impl R2Score {
    /// Largest share of the positive R² mass held by a single output.
    pub fn dominance(&self) -> f64 {
        let total: f64 = self.per_output.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        self.per_output.iter().fold(0.0f64, |a, &b| a.max(b)) / total
    }
}

/// Per-output R² clipped at zero, then averaged.
pub fn score_nonneg_r2(pred: &DMatrix<f64>, y: &DMatrix<f64>) -> R2Score {
    let n = y.nrows() as f64;
    let mut per_output = Vec::with_capacity(y.ncols());
    let mut zero_variance = Vec::with_capacity(y.ncols());
    for j in 0..y.ncols() {
        let col = y.column(j);
        let m = col.sum() / n;
        let ss_tot: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
        let ss_res: f64 = col
            .iter()
            .zip(pred.column(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let degenerate = ss_tot <= 1e-12 * n * (1.0 + m * m);
        zero_variance.push(degenerate);
        per_output.push(if degenerate {
            0.0
        } else {
            (1.0 - ss_res / ss_tot).max(0.0)
        });
    }
    let score = if per_output.is_empty() {
        0.0
    } else {
        per_output.iter().sum::<f64>() / per_output.len() as f64
    };
    R2Score {
        score,
        per_output,
        zero_variance,
    }
}

/// Standardised activations of one layer with ridge factors shared across
/// targets.
pub struct LayerBank {
    train: DMatrix<f64>,
    val: DMatrix<f64>,
    test: DMatrix<f64>,
    grid: Vec<f64>,
    factors: Vec<Cholesky<f64, Dyn>>,
}

/// A validation-selected fit of one target on one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BankFit {
    pub lambda: f64,
    pub val: R2Score,
    pub test: R2Score,
}

impl LayerBank {
    /// Scaler fitted on `train`; applied to all three splits.
    pub fn new(train: &DMatrix<f64>, val: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<Self> {
        Self::with_grid(train, val, test, &LAMBDA_GRID)
    }

    pub fn with_grid(train: &DMatrix<f64>, val: &DMatrix<f64>, test: &DMatrix<f64>, grid: &[f64]) -> Result<Self> {
        if train.nrows() == 0 {
            return Err(Error::EmptyTrain("layer bank".into()));
        }
        if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidArgument("ridge grid must be non-empty and positive".into()));
        }
        let scaler = InputScaler::fit(train);
        let train = scaler.apply(train);
        let factors = grid
            .iter()
            .map(|&l| gram_factor(&train, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            val: scaler.apply(val),
            test: scaler.apply(test),
            train,
            grid: grid.to_vec(),
            factors,
        })
    }

    /// Fits on `z_train`, picks λ by validation score against `z_val` (first
    /// maximum in grid order) and scores test with that λ.
    pub fn fit_select(&self, z_train: &DMatrix<f64>, z_val: &DMatrix<f64>, z_test: &DMatrix<f64>) -> BankFit {
        let (zc, bias) = center(z_train);
        let xty = self.train.transpose() * zc;
        let mut best: Option<(usize, R2Score, DMatrix<f64>)> = None;
        for (k, f) in self.factors.iter().enumerate() {
            let w = f.solve(&xty);
            let s = score_nonneg_r2(&predict_standardized(&self.val, &w, &bias), z_val);
            if best.as_ref().is_none_or(|(_, b, _)| s.score > b.score) {
                best = Some((k, s, w));
            }
        }
        let (k, val, w) = best.expect("non-empty grid");
        let test = score_nonneg_r2(&predict_standardized(&self.test, &w, &bias), z_test);
        BankFit {
            lambda: self.grid[k],
            val,
            test,
        }
    }
}

/// Thresholds of the encoding criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingThresholds {
    pub r2_min: f64,
    pub control_margin: f64,
    pub peak_margin: f64,
    pub dominance_max: f64,
}

impl Default for EncodingThresholds {
    fn default() -> Self {
        Self {
            r2_min: 0.04,
            control_margin: 0.01,
            peak_margin: 0.002,
            dominance_max: 0.90,
        }
    }
}

/// Inputs of the encoding rule at one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingEvidence {
    pub r2: f64,
    pub shuffled: f64,
    pub gaussian: f64,
    /// `None` skips the peak-margin condition.
    pub peak_margin: Option<f64>,
    pub dominance: f64,
    pub p_q: usize,
}

pub fn encoding_criterion(e: &EncodingEvidence, t: &EncodingThresholds) -> bool {
    e.r2 >= t.r2_min
        && e.r2 >= e.shuffled + t.control_margin
        && e.r2 >= e.gaussian + t.control_margin
        && e.peak_margin.is_none_or(|m| m >= t.peak_margin)
        && (e.p_q <= 1 || e.dominance <= t.dominance_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub feature: String,
    pub p_q: usize,
    pub r2_val: Vec<f64>,
    pub r2_test: Vec<f64>,
    pub lambda: Vec<f64>,
    pub peak_layer: usize,
    pub peak_margin: f64,
    pub shuffled_val: f64,
    pub gaussian_val: f64,
    pub shuffled_test: f64,
    pub gaussian_test: f64,
    pub dominance_val: f64,
    pub dominance_test: f64,
    pub zero_variance_target: bool,
    pub selection_encoded: bool,
    pub test_encoded: bool,
}

impl ProbeRecord {
    pub fn peak_r2_val(&self) -> f64 {
        self.r2_val[self.peak_layer]
    }
}

/// Validation arg-max with ties to the shallower layer; returns (layer, margin over
/// the runner-up, which is 0 for a single layer).
pub fn select_peak(r2_val: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (l, &v) in r2_val.iter().enumerate() {
        if v > r2_val[best] {
            best = l;
        }
    }
    let second = r2_val
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != best)
        .map(|(_, &v)| v)
        .fold(0.0f64, f64::max);
    (best, r2_val[best] - second)
}

fn shuffled_rows(z: &DMatrix<f64>, seed: &SeedContext) -> DMatrix<f64> {
    let mut idx: Vec<usize> = (0..z.nrows()).collect();
    idx.shuffle(&mut seed.rng());
    z.select_rows(&idx)
}

fn gaussian_like(rows: usize, cols: usize, seed: &SeedContext) -> DMatrix<f64> {
    let mut rng = seed.rng();
    let v: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &v)
}

/// Feature targets on the three splits.
pub struct Targets<'a> {
    pub train: &'a DMatrix<f64>,
    pub val: &'a DMatrix<f64>,
    pub test: &'a DMatrix<f64>,
}

/// Probes every layer, selects the validation peak, then fits shuffled and
/// Gaussian control probes at the peak.
pub fn probe_feature(
    feature: &str,
    banks: &[LayerBank],
    z: &Targets<'_>,
    seed: &SeedContext,
    thresholds: &EncodingThresholds,
) -> ProbeRecord {
    let fits: Vec<BankFit> = banks
        .iter()
        .map(|b| b.fit_select(z.train, z.val, z.test))
        .collect();
    let r2_val: Vec<f64> = fits.iter().map(|f| f.val.score).collect();
    let r2_test: Vec<f64> = fits.iter().map(|f| f.test.score).collect();
    let (peak, margin) = select_peak(&r2_val);

    let bank = &banks[peak];
    let shuffled = bank.fit_select(&shuffled_rows(z.train, &seed.with_purpose("probe-shuffled")), z.val, z.test);
    let gauss_target = gaussian_like(z.train.nrows(), z.train.ncols(), &seed.with_purpose("probe-gaussian"));
    let gaussian = bank.fit_select(&gauss_target, z.val, z.test);

    let p_q = z.train.ncols();
    let best = &fits[peak];
    let selection_encoded = encoding_criterion(
        &EncodingEvidence {
            r2: best.val.score,
            shuffled: shuffled.val.score,
            gaussian: gaussian.val.score,
            peak_margin: Some(margin),
            dominance: best.val.dominance(),
            p_q,
        },
        thresholds,
    );
    let test_encoded = encoding_criterion(
        &EncodingEvidence {
            r2: best.test.score,
            shuffled: shuffled.test.score,
            gaussian: gaussian.test.score,
            peak_margin: None,
            dominance: best.test.dominance(),
            p_q,
        },
        thresholds,
    );
    ProbeRecord {
        feature: feature.to_owned(),
        p_q,
        lambda: fits.iter().map(|f| f.lambda).collect(),
        r2_val,
        r2_test,
        peak_layer: peak,
        peak_margin: margin,
        shuffled_val: shuffled.val.score,
        gaussian_val: gaussian.val.score,
        shuffled_test: shuffled.test.score,
        gaussian_test: gaussian.test.score,
        dominance_val: best.val.dominance(),
        dominance_test: best.test.dominance(),
        zero_variance_target: best.val.zero_variance.iter().any(|&b| b),
        selection_encoded,
        test_encoded,
    }
}
