//! Geometry-only linear morphable face model.
//!
//! A shape is `S = S̄ + A_id·α_id + A_ex·α_ex`, stored vertex-major as
//! `[x0, y0, z0, x1, ...]`. Images of a shape come from a weak-perspective
//! camera `v2 = f·Pr·R·v3 + t` where `Pr` keeps the x and y rows.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::ensure_finite;
use crate::linalg::{dot, Matrix};
use crate::{Error, Result};

const UNIT_NORM_TOL: f64 = 1e-8;
const ORTHONORMAL_TOL: f64 = 1e-10;
/// Smallest accepted ratio of smallest to largest singular value.
const MIN_INVERSE_CONDITION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    mean_shape: Vec<f64>,
    identity_basis: Matrix,
    expression_basis: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCoefficients {
    pub alpha_id: Vec<f64>,
    pub alpha_ex: Vec<f64>,
}

impl ShapeCoefficients {
    pub fn zeros(model: &MorphableModel) -> Self {
        ShapeCoefficients {
            alpha_id: vec![0.0; model.k_id()],
            alpha_ex: vec![0.0; model.k_ex()],
        }
    }
}

/// Scale, rotation and image-plane translation of a weak-perspective camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub scale: f64,
    /// Row-major 3×3 rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 2],
}

impl PoseParams {
    pub fn identity() -> Self {
        PoseParams {
            scale: 1.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0],
        }
    }

    pub fn new(scale: f64, rotation: [[f64; 3]; 3], translation: [f64; 2]) -> Result<Self> {
        let p = PoseParams {
            scale,
            rotation,
            translation,
        };
        p.validate()?;
        Ok(p)
    }

    /// Rotation from an axis (need not be unit length) and angle in radians.
    pub fn axis_angle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
        let r = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(Vector3::from(axis)),
            angle,
        );
        let m = r.matrix();
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pose scale must be positive, got {}",
                self.scale
            )));
        }
        ensure_finite(&self.translation, "pose translation")?;
        let r = self.rotation_matrix();
        ensure_finite(r.as_slice(), "pose rotation")?;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL || r.determinant() <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rotation is not a proper orthonormal matrix (|RᵀR − I| = {err:.2e}, det = {:.6})",
                r.determinant()
            )));
        }
        Ok(())
    }

    fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    /// The two image rows of `f·Pr·R`.
    fn camera_rows(&self) -> [[f64; 3]; 2] {
        let f = self.scale;
        let r = &self.rotation;
        [
            [f * r[0][0], f * r[0][1], f * r[0][2]],
            [f * r[1][0], f * r[1][1], f * r[1][2]],
        ]
    }
}

impl MorphableModel {
    pub fn new(mean_shape: Vec<f64>, identity_basis: Matrix, expression_basis: Matrix) -> Result<Self> {
        let rows = mean_shape.len();
        if rows == 0 || rows % 3 != 0 {
            return Err(Error::Dimension(format!(
                "mean shape length {rows} is not a positive multiple of 3"
            )));
        }
        for (name, b) in [("identity", &identity_basis), ("expression", &expression_basis)] {
            if b.rows() != rows {
                return Err(Error::Dimension(format!(
                    "{name} basis has {} rows, mean shape has {rows}",
                    b.rows()
                )));
            }
            if b.cols() == 0 {
                return Err(Error::InvalidArgument(format!("{name} basis has no columns")));
            }
            for j in 0..b.cols() {
                let c = b.column(j);
                let norm = dot(&c, &c).sqrt();
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "{name} basis column {j} has norm {norm}, expected 1"
                    )));
                }
            }
        }
        if rows <= identity_basis.cols() + expression_basis.cols() {
            return Err(Error::InvalidArgument(format!(
                "3V = {rows} must exceed K_id + K_ex = {}",
                identity_basis.cols() + expression_basis.cols()
            )));
        }
        ensure_finite(&mean_shape, "mean shape")?;
        ensure_finite(identity_basis.as_slice(), "identity basis")?;
        ensure_finite(expression_basis.as_slice(), "expression basis")?;
        Ok(MorphableModel {
            mean_shape,
            identity_basis,
            expression_basis,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.mean_shape.len() / 3
    }

    pub fn k_id(&self) -> usize {
        self.identity_basis.cols()
    }

    pub fn k_ex(&self) -> usize {
        self.expression_basis.cols()
    }

    pub fn mean_shape(&self) -> &[f64] {
        &self.mean_shape
    }

    pub fn identity_basis(&self) -> &Matrix {
        &self.identity_basis
    }

    pub fn expression_basis(&self) -> &Matrix {
        &self.expression_basis
    }

    fn check_coefficients(&self, c: &ShapeCoefficients) -> Result<()> {
        if c.alpha_id.len() != self.k_id() || c.alpha_ex.len() != self.k_ex() {
            return Err(Error::Dimension(format!(
                "coefficients ({}, {}) do not match model ({}, {})",
                c.alpha_id.len(),
                c.alpha_ex.len(),
                self.k_id(),
                self.k_ex()
            )));
        }
        ensure_finite(&c.alpha_id, "identity coefficients")?;
        ensure_finite(&c.alpha_ex, "expression coefficients")
    }

    /// `S̄ + A_id·α_id + A_ex·α_ex`
    pub fn synthesize_shape(&self, c: &ShapeCoefficients) -> Result<Vec<f64>> {
        self.check_coefficients(c)?;
        let mut s = self.mean_shape.clone();
        let id = self.identity_basis.matvec(&c.alpha_id);
        let ex = self.expression_basis.matvec(&c.alpha_ex);
        for ((v, a), b) in s.iter_mut().zip(id).zip(ex) {
            *v += a + b;
        }
        Ok(s)
    }

    /// Least-squares coefficients for landmarks observed under a known pose.
    pub fn fit_coefficients(&self, observed_2d: &[f64], pose: &PoseParams) -> Result<ShapeCoefficients> {
        CoefficientSolver::new(self, pose)?.solve(observed_2d)
    }

    /// Alternates a Procrustes pose estimate with a coefficient solve.
    ///
    /// A pose update is kept only when it does not increase the residual, so
    /// the recorded residual sequence never increases.
    pub fn fit_pose_and_coefficients(&self, observed_2d: &[f64], n_iters: usize) -> Result<PoseFit> {
        if n_iters == 0 {
            return Err(Error::InvalidArgument("n_iters must be at least 1".into()));
        }
        self.check_observation(observed_2d)?;
        let mut coeffs = ShapeCoefficients::zeros(self);
        let mut pose: Option<PoseParams> = None;
        let mut residual = f64::INFINITY;
        let mut history = Vec::with_capacity(n_iters);

        for _ in 0..n_iters {
            let shape = self.synthesize_shape(&coeffs)?;
            let candidate = procrustes_pose(&shape, observed_2d)?;
            let r = residual_norm(&candidate, &shape, observed_2d);
            if r <= residual {
                residual = r;
                pose = Some(candidate);
            }
            let current = pose.as_ref().expect("first pose is always accepted");

            let candidate = self.fit_coefficients(observed_2d, current)?;
            let r = residual_norm(current, &self.synthesize_shape(&candidate)?, observed_2d);
            if r <= residual {
                residual = r;
                coeffs = candidate;
            }
            history.push(residual);
        }
        Ok(PoseFit {
            pose: pose.expect("at least one iteration ran"),
            coefficients: coeffs,
            residual,
            residual_history: history,
        })
    }

    fn check_observation(&self, observed_2d: &[f64]) -> Result<()> {
        if observed_2d.len() != 2 * self.n_vertices() {
            return Err(Error::Dimension(format!(
                "{} observed coordinates for {} vertices",
                observed_2d.len(),
                self.n_vertices()
            )));
        }
        ensure_finite(observed_2d, "observed landmarks")
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&ModelFile::from(self)).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        file.into_model().map_err(|e| Error::Data {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

/// `f·Pr·R·v + t` for every vertex of `shape`.
pub fn project(pose: &PoseParams, shape: &[f64]) -> Result<Vec<f64>> {
    pose.validate()?;
    if shape.len() % 3 != 0 {
        return Err(Error::Dimension(format!(
            "shape length {} is not a multiple of 3",
            shape.len()
        )));
    }
    Ok(project_unchecked(pose, shape))
}

fn project_unchecked(pose: &PoseParams, shape: &[f64]) -> Vec<f64> {
    let [r0, r1] = pose.camera_rows();
    let [tx, ty] = pose.translation;
    shape
        .chunks_exact(3)
        .flat_map(|v| [dot(&r0, v) + tx, dot(&r1, v) + ty])
        .collect()
}

fn residual_norm(pose: &PoseParams, shape: &[f64], observed_2d: &[f64]) -> f64 {
    project_unchecked(pose, shape)
        .iter()
        .zip(observed_2d)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Result of [`MorphableModel::fit_pose_and_coefficients`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseFit {
    pub pose: PoseParams,
    pub coefficients: ShapeCoefficients,
    pub residual: f64,
    pub residual_history: Vec<f64>,
}

/// Pseudo-inverse of the coefficient design matrix for one pose, reusable
/// across many frames observed under that pose.
#[derive(Debug, Clone)]
pub struct CoefficientSolver {
    pose: PoseParams,
    /// K×2V
    pinv: DMatrix<f64>,
    /// `f·Pr·R·S̄ + t`
    offset: Vec<f64>,
    k_id: usize,
    condition: f64,
}

impl CoefficientSolver {
    pub fn new(model: &MorphableModel, pose: &PoseParams) -> Result<Self> {
        pose.validate()?;
        let v = model.n_vertices();
        let k = model.k_id() + model.k_ex();
        if 2 * v < k {
            return Err(Error::InvalidArgument(format!(
                "{} image coordinates cannot determine {k} coefficients",
                2 * v
            )));
        }
        let cam = pose.camera_rows();
        let mut design = DMatrix::<f64>::zeros(2 * v, k);
        for col in 0..k {
            let (basis, j) = if col < model.k_id() {
                (&model.identity_basis, col)
            } else {
                (&model.expression_basis, col - model.k_id())
            };
            for i in 0..v {
                let b = [basis.get(3 * i, j), basis.get(3 * i + 1, j), basis.get(3 * i + 2, j)];
                design[(2 * i, col)] = dot(&cam[0], &b);
                design[(2 * i + 1, col)] = dot(&cam[1], &b);
            }
        }
        let svd = design.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(smin > MIN_INVERSE_CONDITION * smax) {
            return Err(Error::RankDeficient { condition });
        }
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        let sinv = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
        let pinv = vt.transpose() * sinv * u.transpose();
        Ok(CoefficientSolver {
            offset: project_unchecked(pose, &model.mean_shape),
            pose: pose.clone(),
            pinv,
            k_id: model.k_id(),
            condition,
        })
    }

    pub fn pose(&self) -> &PoseParams {
        &self.pose
    }

    /// Ratio of largest to smallest singular value of the design matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, observed_2d: &[f64]) -> Result<ShapeCoefficients> {
        if observed_2d.len() != self.offset.len() {
            return Err(Error::Dimension(format!(
                "{} observed coordinates, expected {}",
                observed_2d.len(),
                self.offset.len()
            )));
        }
        ensure_finite(observed_2d, "observed landmarks")?;
        let rhs = DVector::from_iterator(
            observed_2d.len(),
            observed_2d.iter().zip(&self.offset).map(|(o, m)| o - m),
        );
        let alpha = &self.pinv * rhs;
        let (id, ex) = alpha.as_slice().split_at(self.k_id);
        Ok(ShapeCoefficients {
            alpha_id: id.to_vec(),
            alpha_ex: ex.to_vec(),
        })
    }
}

/// Weak-perspective pose of a known 3D shape from its 2D image.
///
/// Fits the affine camera by least squares, then projects it onto the scaled
/// rotations: the two image rows come from the SVD `A = UΣVᵀ` as `UVᵀ`, the
/// third row is their cross product (det +1) and the scale is the mean of the
/// two singular values.
pub fn procrustes_pose(shape: &[f64], observed_2d: &[f64]) -> Result<PoseParams> {
    let v = shape.len() / 3;
    if shape.len() != 3 * v || observed_2d.len() != 2 * v {
        return Err(Error::Dimension(format!(
            "{} shape values vs {} image values",
            shape.len(),
            observed_2d.len()
        )));
    }
    let mean3 = shape.chunks_exact(3).fold(Vector3::zeros(), |acc, p| {
        acc + Vector3::new(p[0], p[1], p[2])
    }) / v as f64;
    let mean2 = observed_2d
        .chunks_exact(2)
        .fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
    let mean2 = [mean2[0] / v as f64, mean2[1] / v as f64];

    // scatter matrices: Σ s sᵀ (3×3) and Σ s oᵀ (3×2) over centered points
    let mut sss = Matrix3::<f64>::zeros();
    let mut sso = Matrix3x2::<f64>::zeros();
    let mut soo = nalgebra::Matrix2::<f64>::zeros();
    for (p, o) in shape.chunks_exact(3).zip(observed_2d.chunks_exact(2)) {
        let s = Vector3::new(p[0], p[1], p[2]) - mean3;
        let o = nalgebra::Vector2::new(o[0] - mean2[0], o[1] - mean2[1]);
        sss += s * s.transpose();
        sso += s * o.transpose();
        soo += o * o.transpose();
    }
    let so = soo.symmetric_eigenvalues();
    let (lo, hi) = (so.min(), so.max());
    if !(lo > 1e-24 * hi.max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate(
            "observed landmarks span fewer than two image dimensions".into(),
        ));
    }
    let sss_inv = sss.try_inverse().ok_or_else(|| {
        Error::Degenerate("current shape is planar; affine camera is undetermined".into())
    })?;
    // A (2×3) = Oᵀ S (SᵀS)⁻¹
    let affine = sso.transpose() * sss_inv;
    let svd = affine.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let rows = u * vt;
    let r1 = Vector3::new(rows[(0, 0)], rows[(0, 1)], rows[(0, 2)]);
    let r2 = Vector3::new(rows[(1, 0)], rows[(1, 1)], rows[(1, 2)]);
    let r3 = r1.cross(&r2);
    let scale = 0.5 * (svd.singular_values[0] + svd.singular_values[1]);
    if !(scale > 0.0) {
        return Err(Error::Degenerate("affine camera has zero scale".into()));
    }
    let rotation = [
        [r1[0], r1[1], r1[2]],
        [r2[0], r2[1], r2[2]],
        [r3[0], r3[1], r3[2]],
    ];
    let m1 = scale * r1.dot(&mean3);
    let m2 = scale * r2.dot(&mean3);
    let pose = PoseParams {
        scale,
        rotation,
        translation: [mean2[0] - m1, mean2[1] - m2],
    };
    pose.validate()?;
    Ok(pose)
}

/// Deterministic toy model: Gaussian mean shape and Gaussian bases,
/// orthonormalized jointly so that identity and expression columns are
/// mutually orthogonal.
pub fn make_toy_model(seed: u64, n_vertices: usize, k_id: usize, k_ex: usize) -> Result<MorphableModel> {
    let rows = 3 * n_vertices;
    if k_id == 0 || k_ex == 0 {
        return Err(Error::InvalidArgument("K_id and K_ex must be at least 1".into()));
    }
    if rows <= k_id + k_ex {
        return Err(Error::InvalidArgument(format!(
            "3V = {rows} must exceed K_id + K_ex = {}",
            k_id + k_ex
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean_shape: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut cols: Vec<Vec<f64>> = (0..k_id + k_ex)
        .map(|_| (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    orthonormalize(&mut cols)?;
    let to_matrix = |cs: &[Vec<f64>]| Matrix::from_fn(rows, cs.len(), |i, j| cs[j][i]);
    MorphableModel::new(
        mean_shape,
        to_matrix(&cols[..k_id]),
        to_matrix(&cols[k_id..]),
    )
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
fn orthonormalize(cols: &mut [Vec<f64>]) -> Result<()> {
    for j in 0..cols.len() {
        let (done, rest) = cols.split_at_mut(j);
        let c = &mut rest[0];
        for _ in 0..2 {
            for q in done.iter() {
                let d = dot(q, c);
                c.iter_mut().zip(q).for_each(|(ci, qi)| *ci -= d * qi);
            }
        }
        let norm = dot(c, c).sqrt();
        if norm < 1e-12 {
            return Err(Error::Degenerate(format!("basis column {j} is linearly dependent")));
        }
        c.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "V")]
    v: usize,
    #[serde(rename = "K_id")]
    k_id: usize,
    #[serde(rename = "K_ex")]
    k_ex: usize,
    mean_shape: Vec<f64>,
    #[serde(rename = "A_id")]
    a_id: Vec<Vec<f64>>,
    #[serde(rename = "A_ex")]
    a_ex: Vec<Vec<f64>>,
}

impl From<&MorphableModel> for ModelFile {
    fn from(m: &MorphableModel) -> Self {
        let rows = |b: &Matrix| b.row_iter().map(<[f64]>::to_vec).collect();
        ModelFile {
            v: m.n_vertices(),
            k_id: m.k_id(),
            k_ex: m.k_ex(),
            mean_shape: m.mean_shape.clone(),
            a_id: rows(&m.identity_basis),
            a_ex: rows(&m.expression_basis),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<MorphableModel> {
        let a_id = Matrix::from_rows(&self.a_id)?;
        let a_ex = Matrix::from_rows(&self.a_ex)?;
        if self.mean_shape.len() != 3 * self.v
            || a_id.shape() != (3 * self.v, self.k_id)
            || a_ex.shape() != (3 * self.v, self.k_ex)
        {
            return Err(Error::Dimension(format!(
                "declared V={}, K_id={}, K_ex={} disagree with array sizes",
                self.v, self.k_id, self.k_ex
            )));
        }
        MorphableModel::new(self.mean_shape, a_id, a_ex)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_model_shapes_and_determinism() {
        let a = make_toy_model(3, 34, 10, 10).unwrap();
        let b = make_toy_model(3, 34, 10, 10).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.identity_basis().shape(), (102, 10));
        assert_eq!(a.expression_basis().shape(), (102, 10));
        assert!(make_toy_model(3, 3, 5, 4).is_err());
    }

    #[test]
    fn zero_and_unit_coefficients() {
        let m = make_toy_model(1, 10, 3, 4).unwrap();
        let mut c = ShapeCoefficients::zeros(&m);
        assert_eq!(m.synthesize_shape(&c).unwrap(), m.mean_shape());
        c.alpha_ex[2] = 1.0;
        let s = m.synthesize_shape(&c).unwrap();
        let col = m.expression_basis().column(2);
        for i in 0..s.len() {
            assert_eq!(s[i], m.mean_shape()[i] + col[i]);
        }
        c.alpha_id.push(0.0);
        assert!(matches!(m.synthesize_shape(&c), Err(Error::Dimension(_))));
    }

    #[test]
    fn projection_examples() {
        let shape = [1.0, 2.0, 3.0, -1.0, 0.5, 7.0];
        assert_eq!(
            project(&PoseParams::identity(), &shape).unwrap(),
            vec![1.0, 2.0, -1.0, 0.5]
        );
        let p = PoseParams::new(2.0, PoseParams::identity().rotation, [1.0, 1.0]).unwrap();
        assert_eq!(project(&p, &[1.0, 0.0, 5.0]).unwrap(), vec![3.0, 1.0]);
        let rz = PoseParams::axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let p = PoseParams::new(1.0, rz, [0.0, 0.0]).unwrap();
        let out = project(&p, &[1.0, 0.0, 0.0]).unwrap();
        assert!(out[0].abs() < 1e-15 && (out[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut p = PoseParams::identity();
        p.rotation[0][0] = 1.1;
        assert!(project(&p, &[0.0, 0.0, 0.0]).is_err());
        let mut p = PoseParams::identity();
        p.rotation[2][2] = -1.0;
        assert!(p.validate().is_err());
        let mut p = PoseParams::identity();
        p.scale = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = make_toy_model(8, 12, 2, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save_json(&path).unwrap();
        assert_eq!(MorphableModel::load_json(&path).unwrap(), m);
    }

    #[test]
    fn degenerate_landmarks_are_rejected() {
        let m = make_toy_model(2, 10, 2, 2).unwrap();
        let flat = vec![1.0; 20];
        assert!(matches!(
            m.fit_pose_and_coefficients(&flat, 5),
            Err(Error::Degenerate(_))
        ));
        assert!(m.fit_pose_and_coefficients(&flat, 0).is_err());
    }
}
