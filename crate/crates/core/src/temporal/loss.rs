//! Training objectives and their gradients with respect to the predictions.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::metrics::{ccc, mse, Moments};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `Σ_dims (1 − CCC) + MSE`, for valence/arousal.
    VaCccMse,
    /// MSE over all entries, for AU intensities.
    AuMse,
}

impl LossKind {
    pub fn value(self, preds: &Matrix, targets: &Matrix) -> Result<f64> {
        match self {
            LossKind::VaCccMse => loss_va(preds, targets),
            LossKind::AuMse => loss_au(preds, targets),
        }
    }

    pub fn value_and_grad(self, preds: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
        match self {
            LossKind::VaCccMse => loss_va_grad(preds, targets),
            LossKind::AuMse => loss_au_grad(preds, targets),
        }
    }
}

fn check_shapes(preds: &Matrix, targets: &Matrix) -> Result<()> {
    if preds.shape() != targets.shape() {
        return Err(Error::Dimension(format!(
            "predictions {:?} vs targets {:?}",
            preds.shape(),
            targets.shape()
        )));
    }
    if preds.rows() == 0 || preds.cols() == 0 {
        return Err(Error::InvalidArgument("empty loss input".into()));
    }
    Ok(())
}

/// Inverse-CCC plus MSE, with CCC computed per output column over the frames
/// of the window.
pub fn loss_va(preds: &Matrix, targets: &Matrix) -> Result<f64> {
    check_shapes(preds, targets)?;
    if preds.rows() < 2 {
        return Err(Error::InvalidArgument("CCC loss needs at least 2 frames".into()));
    }
    let mut total = 0.0;
    for j in 0..preds.cols() {
        total += 1.0 - ccc(&targets.column(j), &preds.column(j))?;
    }
    Ok(total + mse(targets.as_slice(), preds.as_slice())?)
}

pub fn loss_au(preds: &Matrix, targets: &Matrix) -> Result<f64> {
    check_shapes(preds, targets)?;
    mse(targets.as_slice(), preds.as_slice())
}

fn mse_grad(preds: &Matrix, targets: &Matrix) -> Matrix {
    let n = preds.as_slice().len() as f64;
    let data = preds
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Matrix::from_vec(preds.rows(), preds.cols(), data).expect("shape preserved")
}

pub fn loss_au_grad(preds: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    let value = loss_au(preds, targets)?;
    Ok((value, mse_grad(preds, targets)))
}

pub fn loss_va_grad(preds: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    let value = loss_va(preds, targets)?;
    let mut grad = mse_grad(preds, targets);
    let t_len = preds.rows();
    let n = t_len as f64;
    for j in 0..preds.cols() {
        let x = targets.column(j);
        let y = preds.column(j);
        let m = Moments::of(&x, &y);
        let dm = m.mean_t - m.mean_p;
        let denom = dm * dm + m.var_t + m.var_p;
        if denom == 0.0 {
            continue;
        }
        // d(1 − 2·cov/D)/dy_i with population moments
        for i in 0..t_len {
            let d_cov = (x[i] - m.mean_t) / n;
            let d_denom = (-2.0 * dm + 2.0 * (y[i] - m.mean_p)) / n;
            let d_ccc = (2.0 * d_cov * denom - 2.0 * m.cov * d_denom) / (denom * denom);
            let g = grad.get(i, j) - d_ccc;
            grad.set(i, j, g);
        }
    }
    Ok((value, grad))
}
