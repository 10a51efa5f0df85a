//! Expression-embedding post-processing: PCA compression and quantile-range
//! scaling.

use serde::{Deserialize, Serialize};

use crate::error::ensure_finite;
use crate::linalg::{dot, Matrix};
use crate::{Error, Result};

const STD_FLOOR: f64 = 1e-8;

/// PCA of standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Per-dimension sample standard deviation, floored at 1e-8.
    pub scale: Vec<f64>,
    /// D×C, orthonormal columns ordered by decreasing eigenvalue.
    pub components: Matrix,
    /// Eigenvalues of the kept components.
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Eigenvalues of every component, kept and discarded, in decreasing order.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.cols()
    }

    fn check_dim(&self, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::Dimension(format!("expected {want} values, got {got}")));
        }
        Ok(())
    }

    /// `Cᵀ·((x − mean) / scale)`
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len(), self.input_dim())?;
        let z: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect();
        let c = &self.components;
        Ok((0..c.cols())
            .map(|k| (0..c.rows()).map(|d| c.get(d, k) * z[d]).sum())
            .collect())
    }

    /// `mean + scale ∘ (C·z)`
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z.len(), self.n_components())?;
        Ok(self
            .components
            .row_iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((row, m), s)| m + s * dot(row, z))
            .collect())
    }

    pub fn transform_matrix(&self, data: &Matrix) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = data.row_iter().map(|r| self.transform(r)).collect::<Result<_>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.n_components()));
        }
        Matrix::from_rows(&rows)
    }

    /// Fraction of total variance captured by the first `c` components.
    pub fn cumulative_ratio(&self, c: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues.iter().take(c).sum::<f64>() / total
    }
}

/// Standardizes `data` (N×D) and keeps the top `n_components` eigenvectors of
/// its sample covariance.
pub fn fit_pca(data: &Matrix, n_components: usize) -> Result<PcaModel> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 samples, got {n}")));
    }
    if n_components < 1 || n_components > (n - 1).min(d) {
        return Err(Error::InvalidArgument(format!(
            "n_components must lie in 1..={}, got {n_components}",
            (n - 1).min(d)
        )));
    }
    ensure_finite(data.as_slice(), "PCA input")?;

    let mean: Vec<f64> = (0..d).map(|j| data.column(j).iter().sum::<f64>() / n as f64).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let ss: f64 = data.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt().max(STD_FLOOR)
        })
        .collect();
    let z = Matrix::from_fn(n, d, |i, j| (data.get(i, j) - mean[j]) / scale[j]);
    let zt = z.transpose();
    let mut cov = zt.matmul(&z)?;
    cov.as_mut_slice().iter_mut().for_each(|v| *v /= (n - 1) as f64);
    // symmetrize away gemm rounding before the symmetric solver
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (cov.get(i, j) + cov.get(j, i));
            cov.set(i, j, avg);
            cov.set(j, i, avg);
        }
    }

    let eig = nalgebra::SymmetricEigen::new(cov.to_nalgebra());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();

    let mut components = Matrix::zeros(d, n_components);
    for (c, &k) in order.iter().take(n_components).enumerate() {
        let v = eig.eigenvectors.column(k);
        // sign convention: largest-magnitude entry positive (first one on ties)
        let pivot = (0..d).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components.set(i, c, sign * v[i]);
        }
    }
    let explained_variance = eigenvalues[..n_components].to_vec();
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaModel {
        mean,
        scale,
        components,
        explained_variance,
        explained_variance_ratio,
        eigenvalues,
    })
}

/// Per-dimension robust scaling `(x − median) / (q_hi − q_lo)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileScaler {
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
    pub q_lo: f64,
    pub q_hi: f64,
}

impl QuantileScaler {
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.median.len() {
            return Err(Error::Dimension(format!(
                "expected {} values, got {}",
                self.median.len(),
                x.len()
            )));
        }
        Ok(x.iter()
            .zip(&self.median)
            .zip(&self.iqr)
            .map(|((x, m), r)| if *r > 0.0 { (x - m) / r } else { 0.0 })
            .collect())
    }

    pub fn apply_matrix(&self, data: &Matrix) -> Result<Matrix> {
        let mut out = data.clone();
        for i in 0..data.rows() {
            let scaled = self.apply(data.row(i))?;
            out.row_mut(i).copy_from_slice(&scaled);
        }
        Ok(out)
    }
}

/// Quantile with linear interpolation between order statistics of a sorted
/// slice (position `q·(n−1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn fit_quantile_scaler(data: &Matrix, q_lo: f64, q_hi: f64) -> Result<QuantileScaler> {
    if !(0.0..=1.0).contains(&q_lo) || !(0.0..=1.0).contains(&q_hi) || q_lo >= q_hi {
        return Err(Error::InvalidArgument(format!(
            "quantiles must satisfy 0 <= q_lo < q_hi <= 1, got ({q_lo}, {q_hi})"
        )));
    }
    if data.rows() == 0 {
        return Err(Error::InvalidArgument("cannot fit a scaler on empty data".into()));
    }
    ensure_finite(data.as_slice(), "scaler input")?;
    let mut median = Vec::with_capacity(data.cols());
    let mut iqr = Vec::with_capacity(data.cols());
    for j in 0..data.cols() {
        let mut col = data.column(j);
        col.sort_by(f64::total_cmp);
        median.push(quantile_sorted(&col, 0.5));
        iqr.push((quantile_sorted(&col, q_hi) - quantile_sorted(&col, q_lo)).max(0.0));
    }
    Ok(QuantileScaler {
        median,
        iqr,
        q_lo,
        q_hi,
    })
}

/// Feature pipeline fitted on training frames: optional quantile-range
/// scaling followed by optional PCA compression.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub quantile: Option<QuantileScaler>,
    pub pca: Option<PcaModel>,
}

impl Preprocessing {
    pub fn fit(train_frames: &Matrix, quantile: bool, pca_components: Option<usize>) -> Result<Self> {
        let quantile = if quantile {
            Some(fit_quantile_scaler(train_frames, 0.25, 0.75)?)
        } else {
            None
        };
        let scaled = match &quantile {
            Some(q) => q.apply_matrix(train_frames)?,
            None => train_frames.clone(),
        };
        let pca = pca_components.map(|c| fit_pca(&scaled, c)).transpose()?;
        Ok(Preprocessing { quantile, pca })
    }

    pub fn is_identity(&self) -> bool {
        self.quantile.is_none() && self.pca.is_none()
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.pca.as_ref().map_or(input_dim, PcaModel::n_components)
    }

    pub fn apply(&self, frames: &Matrix) -> Result<Matrix> {
        let scaled = match &self.quantile {
            Some(q) => q.apply_matrix(frames)?,
            None => frames.clone(),
        };
        match &self.pca {
            Some(p) => p.transform_matrix(&scaled),
            None => Ok(scaled),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_scaler_hand_example() {
        let data = Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0], [5.0]]).unwrap();
        let s = fit_quantile_scaler(&data, 0.25, 0.75).unwrap();
        assert_eq!(s.median, vec![3.0]);
        assert_eq!(s.iqr, vec![2.0]);
        assert_eq!(s.apply(&[5.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn constant_column_scales_to_zero() {
        let data = Matrix::from_rows(&[[7.0, 1.0], [7.0, 2.0], [7.0, 4.0]]).unwrap();
        let s = fit_quantile_scaler(&data, 0.25, 0.75).unwrap();
        for row in data.row_iter() {
            assert_eq!(s.apply(row).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn scaler_rejects_bad_arguments() {
        let data = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(fit_quantile_scaler(&data, 0.75, 0.25).is_err());
        assert!(fit_quantile_scaler(&Matrix::zeros(0, 2), 0.25, 0.75).is_err());
    }

    #[test]
    fn pca_rank_one_data() {
        let dir = [1.0, -2.0, 0.5, 3.0];
        let data = Matrix::from_fn(20, 4, |i, j| 10.0 + (i as f64 - 7.0) * dir[j]);
        let m = fit_pca(&data, 1).unwrap();
        assert!((m.explained_variance_ratio[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pca_argument_checks() {
        let data = Matrix::from_fn(4, 3, |i, j| (i * j) as f64 + i as f64);
        assert!(fit_pca(&data, 0).is_err());
        assert!(fit_pca(&data, 4).is_err());
        assert!(fit_pca(&data.slice_rows(0, 1), 1).is_err());
    }

    #[test]
    fn pca_of_mean_is_zero() {
        let data = Matrix::from_fn(10, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * j as f64);
        let m = fit_pca(&data, 2).unwrap();
        let z = m.transform(&m.mean).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert!(m.transform(&[1.0]).is_err());
        assert!(m.inverse(&[1.0, 2.0, 3.0]).is_err());
    }
}
