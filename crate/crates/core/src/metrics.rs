//! Agreement and regression statistics.
//!
//! All variances and covariances use population (1/N) normalization so that
//! CCC, PCC and the training loss agree exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ensure_finite;
use crate::linalg::Matrix;
use crate::{Error, Result};

/// Ground truth paired with predictions of equal length.
#[derive(Debug, Clone, Copy)]
pub struct PairedSeries<'a> {
    target: &'a [f64],
    prediction: &'a [f64],
}

impl<'a> PairedSeries<'a> {
    pub fn new(target: &'a [f64], prediction: &'a [f64]) -> Result<Self> {
        if target.len() != prediction.len() {
            return Err(Error::Dimension(format!(
                "target has {} values, prediction has {}",
                target.len(),
                prediction.len()
            )));
        }
        if target.is_empty() {
            return Err(Error::InvalidArgument("empty series".into()));
        }
        ensure_finite(target, "target series")?;
        ensure_finite(prediction, "prediction series")?;
        Ok(PairedSeries { target, prediction })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn target(&self) -> &'a [f64] {
        self.target
    }

    pub fn prediction(&self) -> &'a [f64] {
        self.prediction
    }
}

/// First and second moments of a paired series.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Moments {
    pub mean_t: f64,
    pub mean_p: f64,
    pub var_t: f64,
    pub var_p: f64,
    pub cov: f64,
}

impl Moments {
    pub fn of(target: &[f64], prediction: &[f64]) -> Moments {
        let n = target.len() as f64;
        let mean_t = target.iter().sum::<f64>() / n;
        let mean_p = prediction.iter().sum::<f64>() / n;
        let (mut var_t, mut var_p, mut cov) = (0.0, 0.0, 0.0);
        for (&t, &p) in target.iter().zip(prediction) {
            let (dt, dp) = (t - mean_t, p - mean_p);
            var_t += dt * dt;
            var_p += dp * dp;
            cov += dt * dp;
        }
        Moments {
            mean_t,
            mean_p,
            var_t: var_t / n,
            var_p: var_p / n,
            cov: cov / n,
        }
    }
}

/// Variance below this fraction of the squared magnitude is rounding noise.
const DEGENERATE_REL: f64 = 1e-24;

fn negligible_variance(var: f64, values: &[f64]) -> bool {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v * v));
    var <= DEGENERATE_REL * scale
}

/// Lin's concordance correlation coefficient.
///
/// Returns 1 when both series are constant and equal (zero denominator).
pub fn ccc(target: &[f64], prediction: &[f64]) -> Result<f64> {
    let s = PairedSeries::new(target, prediction)?;
    s.ccc()
}

impl PairedSeries<'_> {
    pub fn ccc(&self) -> Result<f64> {
        if self.len() < 2 {
            return Err(Error::InvalidArgument("CCC needs at least 2 samples".into()));
        }
        let m = Moments::of(self.target, self.prediction);
        let dm = m.mean_t - m.mean_p;
        let denom = dm * dm + m.var_t + m.var_p;
        if denom == 0.0 {
            return Ok(1.0);
        }
        Ok((2.0 * m.cov / denom).clamp(-1.0, 1.0))
    }

    pub fn mse(&self) -> f64 {
        mse_unchecked(self.target, self.prediction)
    }

    pub fn regression_metrics(&self) -> Result<RegressionMetrics> {
        let n = self.len() as f64;
        let mse = self.mse();
        let mae = self
            .target
            .iter()
            .zip(self.prediction)
            .map(|(t, p)| (t - p).abs())
            .sum::<f64>()
            / n;
        let pcc = if self.len() < 2 {
            return Err(Error::InvalidArgument("PCC needs at least 2 samples".into()));
        } else {
            let m = Moments::of(self.target, self.prediction);
            if negligible_variance(m.var_t, self.target)
                || negligible_variance(m.var_p, self.prediction)
            {
                0.0
            } else {
                (m.cov / (m.var_t.sqrt() * m.var_p.sqrt())).clamp(-1.0, 1.0)
            }
        };
        Ok(RegressionMetrics {
            pcc,
            rmse: mse.sqrt(),
            mse,
            acc: 1.0 - mae,
        })
    }
}

pub(crate) fn mse_unchecked(target: &[f64], prediction: &[f64]) -> f64 {
    target
        .iter()
        .zip(prediction)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / target.len() as f64
}

/// Mean squared error.
pub fn mse(target: &[f64], prediction: &[f64]) -> Result<f64> {
    Ok(PairedSeries::new(target, prediction)?.mse())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub pcc: f64,
    pub rmse: f64,
    pub mse: f64,
    pub acc: f64,
}

/// PCC, RMSE, MSE and accuracy (`1 − mean |error|`).
///
/// PCC is 0 when either series has zero variance.
pub fn regression_metrics(target: &[f64], prediction: &[f64]) -> Result<RegressionMetrics> {
    PairedSeries::new(target, prediction)?.regression_metrics()
}

/// N subjects rated by R raters, stored N×R.
#[derive(Debug, Clone)]
pub struct RatingsMatrix(Matrix);

impl RatingsMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() < 2 || values.cols() < 2 {
            return Err(Error::InvalidArgument(format!(
                "ICC needs at least 2 subjects and 2 raters, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        ensure_finite(values.as_slice(), "ratings")?;
        Ok(RatingsMatrix(values))
    }

    /// Two raters: ground truth and prediction.
    pub fn from_pair(target: &[f64], prediction: &[f64]) -> Result<Self> {
        PairedSeries::new(target, prediction)?;
        let rows: Vec<[f64; 2]> = target
            .iter()
            .zip(prediction)
            .map(|(&t, &p)| [t, p])
            .collect();
        RatingsMatrix::new(Matrix::from_rows(&rows)?)
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    /// ICC(3,1), two-way mixed effects, consistency, single rater.
    pub fn icc31(&self) -> Result<f64> {
        let m = &self.0;
        let (n, r) = m.shape();
        let (nf, rf) = (n as f64, r as f64);
        let grand = m.as_slice().iter().sum::<f64>() / (nf * rf);
        let row_means: Vec<f64> = m.row_iter().map(|row| row.iter().sum::<f64>() / rf).collect();
        let col_means: Vec<f64> = (0..r)
            .map(|j| (0..n).map(|i| m.get(i, j)).sum::<f64>() / nf)
            .collect();

        let ss_rows = rf * row_means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
        let mut ss_err = 0.0;
        for i in 0..n {
            for j in 0..r {
                let e = m.get(i, j) - row_means[i] - col_means[j] + grand;
                ss_err += e * e;
            }
        }
        let bms = ss_rows / (nf - 1.0);
        let ems = ss_err / ((nf - 1.0) * (rf - 1.0));
        let denom = bms + (rf - 1.0) * ems;

        let scale = m.as_slice().iter().fold(0.0f64, |acc, v| acc.max(v * v));
        if denom <= DEGENERATE_REL * scale {
            let rows_constant = m.row_iter().all(|row| {
                let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (hi - lo) * (hi - lo) <= DEGENERATE_REL * scale
            });
            return if rows_constant {
                Ok(1.0)
            } else {
                Err(Error::Degenerate(
                    "ANOVA has no between-subject or residual variance".into(),
                ))
            };
        }
        Ok((bms - ems) / denom)
    }
}

/// ICC(3,1) of a ratings matrix.
pub fn icc31(ratings: &RatingsMatrix) -> Result<f64> {
    ratings.icc31()
}

/// Confusion matrix (rows = truth, columns = prediction) and accuracy.
pub fn confusion_and_accuracy(
    truth: &[usize],
    predicted: &[usize],
    n_classes: usize,
) -> Result<(Vec<Vec<u64>>, f64)> {
    if truth.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {} outside 0..{n_classes}",
                t.max(p)
            )));
        }
        cm[t][p] += 1;
    }
    let total = truth.len();
    let correct: u64 = (0..n_classes).map(|c| cm[c][c]).sum();
    let acc = if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    };
    Ok((cm, acc))
}

/// The six per-dimension statistics in a [`MetricsReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionMetrics {
    pub ccc: f64,
    pub icc: f64,
    pub mse: f64,
    pub pcc: f64,
    pub rmse: f64,
    pub acc: f64,
}

impl DimensionMetrics {
    pub const NAMES: [&'static str; 6] = ["ccc", "icc", "mse", "pcc", "rmse", "acc"];

    pub fn compute(target: &[f64], prediction: &[f64]) -> Result<Self> {
        let s = PairedSeries::new(target, prediction)?;
        let reg = s.regression_metrics()?;
        // an undefined ICC (e.g. two distinct constant columns) reports as 0
        let icc = RatingsMatrix::from_pair(target, prediction)
            .and_then(|m| m.icc31())
            .unwrap_or_else(|e| {
                log::debug!("ICC undefined, reporting 0: {e}");
                0.0
            });
        Ok(DimensionMetrics {
            ccc: s.ccc()?,
            icc,
            mse: reg.mse,
            pcc: reg.pcc,
            rmse: reg.rmse,
            acc: reg.acc,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [self.ccc, self.icc, self.mse, self.pcc, self.rmse, self.acc]
    }

    fn mean(items: &[DimensionMetrics]) -> DimensionMetrics {
        let n = items.len() as f64;
        let mut acc = [0.0; 6];
        for m in items {
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a += v;
            }
        }
        let [ccc, icc, mse, pcc, rmse, acc_] = acc.map(|v| v / n);
        DimensionMetrics {
            ccc,
            icc,
            mse,
            pcc,
            rmse,
            acc: acc_,
        }
    }
}

/// How frames from several sequences are combined before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Concatenate every frame, then score once.
    #[default]
    Pooled,
    /// Score each sequence separately, then average the scores.
    PerSequence,
}

/// Per-dimension metrics, keyed by label name.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    dims: Vec<(String, DimensionMetrics)>,
}

impl MetricsReport {
    /// Scores `targets` against `predictions`, one pair of T×L matrices per
    /// sequence, with columns named by `names`.
    pub fn compute(
        names: &[String],
        targets: &[Matrix],
        predictions: &[Matrix],
        aggregation: Aggregation,
    ) -> Result<Self> {
        if targets.len() != predictions.len() || targets.is_empty() {
            return Err(Error::Dimension(format!(
                "{} target sequences vs {} prediction sequences",
                targets.len(),
                predictions.len()
            )));
        }
        for (t, p) in targets.iter().zip(predictions) {
            if t.shape() != p.shape() || t.cols() != names.len() {
                return Err(Error::Dimension(format!(
                    "target {:?} vs prediction {:?} with {} names",
                    t.shape(),
                    p.shape(),
                    names.len()
                )));
            }
        }
        let mut dims = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            let m = match aggregation {
                Aggregation::Pooled => {
                    let t: Vec<f64> = targets.iter().flat_map(|m| m.column(j)).collect();
                    let p: Vec<f64> = predictions.iter().flat_map(|m| m.column(j)).collect();
                    DimensionMetrics::compute(&t, &p)?
                }
                Aggregation::PerSequence => {
                    let per: Vec<DimensionMetrics> = targets
                        .iter()
                        .zip(predictions)
                        .map(|(t, p)| DimensionMetrics::compute(&t.column(j), &p.column(j)))
                        .collect::<Result<_>>()?;
                    DimensionMetrics::mean(&per)
                }
            };
            dims.push((name.clone(), m));
        }
        Ok(MetricsReport { dims })
    }

    pub fn get(&self, name: &str) -> Option<&DimensionMetrics> {
        self.dims.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn dimensions(&self) -> impl Iterator<Item = (&str, &DimensionMetrics)> {
        self.dims.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn mean_ccc(&self) -> f64 {
        self.dims.iter().map(|(_, m)| m.ccc).sum::<f64>() / self.dims.len() as f64
    }

    pub fn mean_icc(&self) -> f64 {
        self.dims.iter().map(|(_, m)| m.icc).sum::<f64>() / self.dims.len() as f64
    }

    /// Column names of [`MetricsReport::flat_values`], in order.
    pub fn flat_keys(&self) -> Vec<String> {
        self.dims
            .iter()
            .flat_map(|(n, _)| DimensionMetrics::NAMES.iter().map(move |m| format!("{n}.{m}")))
            .collect()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.dims.iter().flat_map(|(_, m)| m.values()).collect()
    }

    /// `<dimension>.<metric>` → value.
    pub fn to_flat(&self) -> BTreeMap<String, f64> {
        self.flat_keys().into_iter().zip(self.flat_values()).collect()
    }
}

impl Serialize for MetricsReport {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_flat().serialize(serializer)
    }
}
