//! Train-fitted column scaling.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::registry::{ColumnLayout, ColumnMeta};
use crate::error::{Error, Result};
use crate::numeric::{mean, pop_std, quantile_sorted, sorted};

/// Spread threshold below which a scaling branch is rejected.
pub const SPREAD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMethod {
    Robust,
    Meanstd,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub center: f64,
    pub scale: f64,
    pub method: ScaleMethod,
}

impl ColumnScaler {
    /// Median/IQR when the IQR is usable, else mean/std, else unit scale.
    pub fn fit(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Self {
                center: 0.0,
                scale: 1.0,
                method: ScaleMethod::Unit,
            };
        }
        let s = sorted(&finite);
        let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
        if iqr > SPREAD_FLOOR {
            return Self {
                center: quantile_sorted(&s, 0.5),
                scale: iqr,
                method: ScaleMethod::Robust,
            };
        }
        let sd = pop_std(&finite);
        let center = mean(&finite);
        if sd > SPREAD_FLOOR {
            Self {
                center,
                scale: sd,
                method: ScaleMethod::Meanstd,
            }
        } else {
            Self {
                center,
                scale: 1.0,
                method: ScaleMethod::Unit,
            }
        }
    }

    /// Scales one value; non-finite input is imputed to 0.
    pub fn apply(&self, v: f64) -> f64 {
        let z = (v - self.center) / self.scale;
        if z.is_finite() {
            z
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnQc {
    /// Share of non-finite training entries.
    pub nonfinite_ratio: f64,
    /// The robust branch was rejected on the training rows.
    pub low_variance: bool,
}

/// Per-column scalers fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub scalers: Vec<ColumnScaler>,
    pub qc: Vec<ColumnQc>,
}

impl Standardizer {
    pub fn fit(raw: &DMatrix<f64>, train_rows: &[usize]) -> Result<Self> {
        if train_rows.is_empty() {
            return Err(Error::EmptyTrain("standardizer fit".into()));
        }
        if let Some(&r) = train_rows.iter().find(|&&r| r >= raw.nrows()) {
            return Err(Error::shape("training row index", raw.nrows(), r));
        }
        let (scalers, qc) = (0..raw.ncols())
            .map(|c| {
                let col: Vec<f64> = train_rows.iter().map(|&r| raw[(r, c)]).collect();
                let nonfinite = col.iter().filter(|v| !v.is_finite()).count();
                let scaler = ColumnScaler::fit(&col);
                let qc = ColumnQc {
                    nonfinite_ratio: nonfinite as f64 / col.len() as f64,
                    low_variance: scaler.method != ScaleMethod::Robust,
                };
                (scaler, qc)
            })
            .unzip();
        Ok(Self { scalers, qc })
    }

    pub fn apply(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.ncols() != self.scalers.len() {
            return Err(Error::shape("feature columns", self.scalers.len(), raw.ncols()));
        }
        Ok(DMatrix::from_fn(raw.nrows(), raw.ncols(), |r, c| {
            self.scalers[c].apply(raw[(r, c)])
        }))
    }
}

/// Standardised expanded features with their column metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: DMatrix<f64>,
    pub columns: Vec<ColumnMeta>,
    pub standardizer: Standardizer,
}

impl FeatureMatrix {
    /// Fits the scaler on `train_rows` and applies it to every row.
    pub fn standardize(raw: &DMatrix<f64>, train_rows: &[usize]) -> Result<Self> {
        let layout = ColumnLayout::registry();
        let columns = if raw.ncols() == layout.n_columns() {
            layout.columns().to_vec()
        } else {
            (0..raw.ncols())
                .map(|c| ColumnMeta {
                    feature: format!("col{c}"),
                    statistic: "value".into(),
                })
                .collect()
        };
        let standardizer = Standardizer::fit(raw, train_rows)?;
        let values = standardizer.apply(raw)?;
        Ok(Self {
            values,
            columns,
            standardizer,
        })
    }

    pub fn rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.values.select_rows(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robust_branch_on_outlier_column() {
        let s = ColumnScaler::fit(&[0.0, 1.0, 2.0, 3.0, 100.0]);
        assert_eq!(s.method, ScaleMethod::Robust);
        assert_eq!(s.center, 2.0);
        assert_eq!(s.scale, 2.0);
    }

    #[test]
    fn constant_column_is_unit() {
        let raw = DMatrix::from_element(4, 1, 7.0);
        let fm = FeatureMatrix::standardize(&raw, &[0, 1, 2]).unwrap();
        assert_eq!(fm.standardizer.scalers[0].method, ScaleMethod::Unit);
        assert!(fm.standardizer.qc[0].low_variance);
        assert!(fm.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_iqr_falls_back_to_mean_std() {
        let s = ColumnScaler::fit(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 10.0]);
        assert_eq!(s.method, ScaleMethod::Meanstd);
        assert!((s.center - 1.25).abs() < 1e-12);
    }

    #[test]
    fn holdout_rows_use_train_parameters() {
        let raw = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 1000.0]);
        let fm = FeatureMatrix::standardize(&raw, &[0, 1, 2, 3]).unwrap();
        let s = fm.standardizer.scalers[0];
        assert!((s.center - 1.5).abs() < 1e-12);
        assert!((fm.values[(4, 0)] - (1000.0 - 1.5) / 1.5).abs() < 1e-9);
    }

    #[test]
    fn non_finite_imputed_and_counted() {
        let raw = DMatrix::from_column_slice(4, 1, &[f64::NAN, 1.0, 2.0, 3.0]);
        let fm = FeatureMatrix::standardize(&raw, &[0, 1, 2, 3]).unwrap();
        assert_eq!(fm.values[(0, 0)], 0.0);
        assert!((fm.standardizer.qc[0].nonfinite_ratio - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_train_is_rejected() {
        let raw = DMatrix::from_element(2, 1, 1.0);
        assert!(FeatureMatrix::standardize(&raw, &[]).is_err());
    }
}
