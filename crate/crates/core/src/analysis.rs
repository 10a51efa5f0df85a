//! Correspondence studies between AU intensities and affect labels, and kNN
//! leave-one-out classification of expression embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ensure_finite;
use crate::exec::Exec;
use crate::linalg::Matrix;
use crate::metrics::confusion_and_accuracy;
use crate::{Error, Result};

/// Singular-value ratio below which a design matrix counts as rank deficient.
const RANK_TOL: f64 = 1e-10;
const RIDGE_LAMBDA: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinRegResult {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub r_squared: f64,
    pub residual_norm: f64,
    /// Set when the design was rank deficient and the ridge-stabilized
    /// system was solved instead.
    pub ill_conditioned: bool,
    pub condition: f64,
}

impl LinRegResult {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Ordinary least squares with an intercept.
pub fn linreg_fit(x: &Matrix, y: &[f64]) -> Result<LinRegResult> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} rows of X but {} targets", y.len())));
    }
    if n <= k {
        return Err(Error::InvalidArgument(format!(
            "need more samples than features, got N = {n}, K = {k}"
        )));
    }
    ensure_finite(x.as_slice(), "regression inputs")?;
    ensure_finite(y, "regression targets")?;

    let design = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
    let target = DVector::from_column_slice(y);
    let sv = design.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let ill_conditioned = !(smin > RANK_TOL * smax);

    let beta = if ill_conditioned {
        let gram = design.transpose() * &design + DMatrix::identity(k + 1, k + 1) * RIDGE_LAMBDA;
        let rhs = design.transpose() * &target;
        match gram.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => gram
                .svd(true, true)
                .solve(&rhs, f64::EPSILON)
                .map_err(|e| Error::Degenerate(e.to_string()))?,
        }
    } else {
        let qr = design.clone().qr();
        let qty = qr.q().transpose() * &target;
        qr.r()
            .solve_upper_triangular(&qty)
            .ok_or_else(|| Error::Degenerate("triangular solve failed".into()))?
    };

    let fitted = &design * &beta;
    let residual = &target - fitted;
    let ss_res = residual.norm_squared();
    let mean = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-20 * (1.0 + mean * mean) * n as f64 {
        1.0
    } else {
        0.0
    };
    if ill_conditioned {
        log::warn!("regression design is rank deficient (condition {condition:.3e}); solved with ridge λ={RIDGE_LAMBDA}");
    }
    Ok(LinRegResult {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        r_squared,
        residual_norm: ss_res.sqrt(),
        ill_conditioned,
        condition,
    })
}

/// Column-wise z-scoring with sample standard deviation; constant columns
/// are centered only.
pub fn standardize_columns(x: &Matrix) -> Matrix {
    let (n, k) = x.shape();
    let stats: Vec<(f64, f64)> = (0..k)
        .map(|j| {
            let c = x.column(j);
            let m = c.iter().sum::<f64>() / n as f64;
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64).sqrt();
            (m, if sd > 0.0 { sd } else { 1.0 })
        })
        .collect();
    Matrix::from_fn(n, k, |i, j| (x.get(i, j) - stats[j].0) / stats[j].1)
}

/// One 0/1 regression per class.
pub fn onevsrest_linreg(x: &Matrix, labels: &[usize], n_classes: usize) -> Result<Vec<LinRegResult>> {
    if labels.len() != x.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} samples",
            labels.len(),
            x.rows()
        )));
    }
    let mut present = vec![false; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::InvalidArgument(format!("label {l} outside 0..{n_classes}")));
        }
        present[l] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::InvalidArgument(format!("class {missing} has no samples")));
    }
    (0..n_classes)
        .map(|c| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
            linreg_fit(x, &y)
        })
        .collect()
}

/// Regression coefficients laid out as terms (features plus intercept) by
/// targets, for JSON and plot-ready CSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub fits: Vec<LinRegResult>,
}

#[derive(Serialize)]
struct TargetJson<'a> {
    coefficients: BTreeMap<&'a str, f64>,
    intercept: f64,
    r_squared: f64,
    residual_norm: f64,
    ill_conditioned: bool,
    condition: f64,
}

impl CoefficientTable {
    pub fn to_json(&self) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        for (name, fit) in self.target_names.iter().zip(&self.fits) {
            let t = TargetJson {
                coefficients: self
                    .feature_names
                    .iter()
                    .map(String::as_str)
                    .zip(fit.coefficients.iter().copied())
                    .collect(),
                intercept: fit.intercept,
                r_squared: fit.r_squared,
                residual_norm: fit.residual_norm,
                ill_conditioned: fit.ill_conditioned,
                condition: fit.condition,
            };
            out.insert(name.clone(), serde_json::to_value(t).expect("plain data serializes"));
        }
        serde_json::Value::Object(out)
    }

    /// `term,<target...>` with one row per feature and a final `intercept` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = |e: csv::Error| Error::Data {
            path: path.into(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let header = std::iter::once("term".to_string()).chain(self.target_names.iter().cloned());
        w.write_record(header.collect::<Vec<_>>()).map_err(err)?;
        for (j, name) in self.feature_names.iter().enumerate() {
            let row = std::iter::once(name.clone()).chain(self.fits.iter().map(|f| f.coefficients[j].to_string()));
            w.write_record(row.collect::<Vec<_>>()).map_err(err)?;
        }
        let row = std::iter::once("intercept".to_string()).chain(self.fits.iter().map(|f| f.intercept.to_string()));
        w.write_record(row.collect::<Vec<_>>()).map_err(err)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnResult {
    pub accuracy: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub predictions: Vec<usize>,
}

pub fn knn_loocv(features: &Matrix, labels: &[usize], cfg: KnnConfig) -> Result<KnnResult> {
    knn_loocv_with(features, labels, cfg, Exec::default())
}

/// Leave-one-out kNN with Euclidean distance. Neighbors at equal distance are
/// taken in sample order; vote ties go to the class with the smaller summed
/// neighbor distance, then the lower class id.
pub fn knn_loocv_with(features: &Matrix, labels: &[usize], cfg: KnnConfig, exec: Exec) -> Result<KnnResult> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} samples", labels.len())));
    }
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if cfg.k >= n {
        return Err(Error::InvalidArgument(format!(
            "k = {} needs at least {} samples, got {n}",
            cfg.k,
            cfg.k + 1
        )));
    }
    ensure_finite(features.as_slice(), "kNN features")?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);

    let predictions = exec.map_range(n, |i| {
        let xi = features.row(i);
        let mut neigh: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d2: f64 = xi.iter().zip(features.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2.sqrt(), j)
            })
            .collect();
        neigh.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![(0usize, 0.0f64); n_classes];
        for &(d, j) in &neigh[..cfg.k] {
            votes[labels[j]].0 += 1;
            votes[labels[j]].1 += d;
        }
        (0..n_classes)
            .max_by(|&a, &b| {
                votes[a]
                    .0
                    .cmp(&votes[b].0)
                    .then(votes[b].1.total_cmp(&votes[a].1))
                    .then(b.cmp(&a))
            })
            .expect("at least one class")
    });
    let (confusion, accuracy) = confusion_and_accuracy(labels, &predictions, n_classes)?;
    Ok(KnnResult {
        accuracy,
        confusion,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_least_squares() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let fit = linreg_fit(&x, &[1.0, 3.0, 5.0]).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!(fit.residual_norm < 1e-8);
        assert_eq!(fit.r_squared, 1.0);
        assert!(!fit.ill_conditioned);
    }

    #[test]
    fn constant_column_is_flagged() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 5.0]]).unwrap();
        let fit = linreg_fit(&x, &[0.0, 1.0, 2.0, 5.0]).unwrap();
        assert!(fit.ill_conditioned);
        assert!(fit.residual_norm < 1e-6);
    }

    #[test]
    fn needs_more_samples_than_features() {
        let x = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(linreg_fit(&x, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_class_regression() {
        let x = Matrix::from_rows(&[[0.3], [1.2], [2.0], [0.7]]).unwrap();
        let fits = onevsrest_linreg(&x, &[0, 0, 0, 0], 1).unwrap();
        assert!(fits[0].coefficients[0].abs() < 1e-12);
        assert!((fits[0].intercept - 1.0).abs() < 1e-12);
        assert!(onevsrest_linreg(&x, &[0, 0, 2, 0], 3).is_err());
    }

    #[test]
    fn knn_hand_trace() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let r = knn_loocv(&x, &[0, 0, 1], KnnConfig { k: 2 }).unwrap();
        assert_eq!(r.predictions, vec![0, 0, 0]);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!(knn_loocv(&x, &[0, 0, 1], KnnConfig { k: 3 }).is_err());
    }

    #[test]
    fn knn_single_class() {
        let x = Matrix::from_fn(8, 2, |i, j| (i * 3 + j) as f64);
        let r = knn_loocv(&x, &[0; 8], KnnConfig::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }
}
