//! Seeded synthetic datasets built on the toy morphable model.
//!
//! Every sequence gets its own identity and camera. Expression coefficients
//! follow smooth sums of sinusoids; the landmarks they produce are projected
//! and fitted back under the known pose, and the recovered expression
//! coefficients become the per-frame features. Labels are a stored function
//! of the true coefficients, so both learnability and coefficient recovery
//! can be checked against ground truth.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{save_dataset, write_json, Dataset, SequenceRecord, Split};
use crate::face3dmm::{project, CoefficientSolver, MorphableModel, PoseParams, ShapeCoefficients};
use crate::linalg::Matrix;
use crate::seed::mix_seed;
use crate::{Error, Result};

pub const VA_NAMES: [&str; 2] = ["valence", "arousal"];
/// Intensity-coded AUs of the FERA 2015 set.
pub const AU_NAMES: [&str; 5] = ["AU06", "AU10", "AU12", "AU14", "AU17"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Va,
    Au,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Standard deviation of the Gaussian label noise.
    pub noise_sigma: f64,
    /// Multiplies every sinusoid amplitude; 0 gives constant zero trajectories.
    pub amplitude_scale: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            noise_sigma: 0.01,
            amplitude_scale: 1.0,
        }
    }
}

/// Generator parameters written next to a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub task: Task,
    pub seed: u64,
    pub label_names: Vec<String>,
    /// K_ex×L; label `j` is driven by `mapping[:, j]ᵀ·α_ex`.
    pub mapping: Vec<Vec<f64>>,
    /// Per-label additive offsets (AU only; zeros for VA).
    pub offsets: Vec<f64>,
    pub noise_sigma: f64,
    pub amplitude_scale: f64,
}

impl GroundTruth {
    pub fn mapping_matrix(&self) -> Result<Matrix> {
        Matrix::from_rows(&self.mapping)
    }
}

pub struct SynthOutput {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

impl SynthOutput {
    /// Writes sequences, `manifest.json` and `ground_truth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        let manifest = save_dataset(&self.dataset, dir)?;
        write_json(&dir.join("ground_truth.json"), &self.truth)?;
        Ok(manifest)
    }
}

/// Sequence `i` of `n`: every fifth sequence from the fourth on is
/// validation, every fifth from the fifth on is test; with fewer than four
/// sequences the last one is validation.
pub fn split_for(i: usize, n: usize) -> Split {
    if n >= 4 {
        match i % 5 {
            3 => Split::Val,
            4 => Split::Test,
            _ => Split::Train,
        }
    } else if n >= 2 && i == n - 1 {
        Split::Val
    } else {
        Split::Train
    }
}

struct Sinusoid {
    amplitude: f64,
    period: f64,
    phase: f64,
}

fn draw_trajectories(rng: &mut ChaCha8Rng, k_ex: usize, amplitude_scale: f64) -> Vec<Vec<Sinusoid>> {
    (0..k_ex)
        .map(|_| {
            let count = rng.random_range(2..=4);
            (0..count)
                .map(|_| Sinusoid {
                    amplitude: amplitude_scale * rng.random_range(0.2..=1.0),
                    period: rng.random_range(20.0..200.0),
                    phase: rng.random_range(0.0..2.0 * PI),
                })
                .collect()
        })
        .collect()
}

fn random_pose(rng: &mut ChaCha8Rng) -> PoseParams {
    let yaw = rng.random_range(-0.5..0.5);
    let pitch = rng.random_range(-0.3..0.3);
    let roll = rng.random_range(-0.2..0.2);
    let r = nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw);
    let m = r.matrix();
    let rotation = [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ];
    PoseParams {
        scale: rng.random_range(0.8..1.2),
        rotation,
        translation: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
    }
}

/// Expression trajectories of every sequence, recovered from their landmarks.
/// Returns `(true α_ex, recovered α_ex)` per sequence, each T×K_ex.
fn expression_sequences(
    seed: u64,
    n_sequences: usize,
    frames: usize,
    model: &MorphableModel,
    opts: &SynthOptions,
) -> Result<Vec<(Matrix, Matrix)>> {
    let k_ex = model.k_ex();
    (0..n_sequences)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64 + 1));
            let alpha_id: Vec<f64> = (0..model.k_id())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let pose = random_pose(&mut rng);
            let waves = draw_trajectories(&mut rng, k_ex, opts.amplitude_scale);
            let solver = CoefficientSolver::new(model, &pose)?;
            let mut truth = Matrix::zeros(frames, k_ex);
            let mut fitted = Matrix::zeros(frames, k_ex);
            for t in 0..frames {
                let alpha_ex: Vec<f64> = waves
                    .iter()
                    .map(|ws| {
                        ws.iter()
                            .map(|w| w.amplitude * (2.0 * PI * t as f64 / w.period + w.phase).sin())
                            .sum()
                    })
                    .collect();
                let coeffs = ShapeCoefficients {
                    alpha_id: alpha_id.clone(),
                    alpha_ex,
                };
                let landmarks = project(&pose, &model.synthesize_shape(&coeffs)?)?;
                let recovered = solver.solve(&landmarks)?;
                truth.row_mut(t).copy_from_slice(&coeffs.alpha_ex);
                fitted.row_mut(t).copy_from_slice(&recovered.alpha_ex);
            }
            Ok((truth, fitted))
        })
        .collect()
}

fn check_sizes(n_sequences: usize, frames: usize, mapping: &Matrix, model: &MorphableModel) -> Result<()> {
    if n_sequences == 0 || frames == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least one sequence and one frame, got {n_sequences} and {frames}"
        )));
    }
    if mapping.rows() != model.k_ex() || mapping.cols() == 0 {
        return Err(Error::Dimension(format!(
            "mapping is {:?}, expected {}×L",
            mapping.shape(),
            model.k_ex()
        )));
    }
    Ok(())
}

fn assemble(
    task: Task,
    seed: u64,
    label_names: Vec<String>,
    mapping: &Matrix,
    offsets: Vec<f64>,
    opts: &SynthOptions,
    sequences: Vec<SequenceRecord>,
    k_ex: usize,
) -> SynthOutput {
    SynthOutput {
        dataset: Dataset {
            feature_dim: k_ex,
            label_names: label_names.clone(),
            sequences,
        },
        truth: GroundTruth {
            task,
            seed,
            label_names,
            mapping: mapping.row_iter().map(<[f64]>::to_vec).collect(),
            offsets,
            noise_sigma: opts.noise_sigma,
            amplitude_scale: opts.amplitude_scale,
        },
    }
}

/// Valence/arousal labels `tanh(mappingᵀ·α_ex) + noise`, clipped to [−1, 1].
pub fn synth_va_dataset(
    seed: u64,
    n_sequences: usize,
    frames: usize,
    model: &MorphableModel,
    mapping: &Matrix,
    opts: &SynthOptions,
) -> Result<SynthOutput> {
    check_sizes(n_sequences, frames, mapping, model)?;
    if mapping.cols() != 2 {
        return Err(Error::Dimension(format!(
            "valence/arousal mapping needs 2 columns, got {}",
            mapping.cols()
        )));
    }
    let noise = Normal::new(0.0, opts.noise_sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
    let seqs = expression_sequences(seed, n_sequences, frames, model, opts)?;
    let mut label_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0));
    let sequences = seqs
        .into_iter()
        .enumerate()
        .map(|(i, (truth, fitted))| {
            let pre = truth.matmul(mapping)?;
            let labels = Matrix::from_fn(frames, 2, |t, j| {
                (pre.get(t, j).tanh() + noise.sample(&mut label_rng)).clamp(-1.0, 1.0)
            });
            Ok(SequenceRecord {
                id: format!("seq{i:03}"),
                frames: fitted,
                labels,
                split: split_for(i, n_sequences),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let names = VA_NAMES.iter().map(|s| s.to_string()).collect();
    Ok(assemble(Task::Va, seed, names, mapping, vec![0.0; 2], opts, sequences, model.k_ex()))
}

pub const AU_MAX_INTENSITY: f64 = 5.0;

/// AU intensities `clip(mappingᵀ·α_ex + offset + noise, 0, 5)`.
pub fn synth_au_dataset(
    seed: u64,
    n_sequences: usize,
    frames: usize,
    model: &MorphableModel,
    mapping: &Matrix,
    offsets: &[f64],
    opts: &SynthOptions,
) -> Result<SynthOutput> {
    check_sizes(n_sequences, frames, mapping, model)?;
    let n_aus = mapping.cols();
    if offsets.len() != n_aus {
        return Err(Error::Dimension(format!(
            "{} offsets for {n_aus} AUs",
            offsets.len()
        )));
    }
    let noise = Normal::new(0.0, opts.noise_sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
    let seqs = expression_sequences(seed, n_sequences, frames, model, opts)?;
    let mut label_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0));
    let sequences = seqs
        .into_iter()
        .enumerate()
        .map(|(i, (truth, fitted))| {
            let pre = truth.matmul(mapping)?;
            let labels = Matrix::from_fn(frames, n_aus, |t, j| {
                (pre.get(t, j) + offsets[j] + noise.sample(&mut label_rng)).clamp(0.0, AU_MAX_INTENSITY)
            });
            Ok(SequenceRecord {
                id: format!("seq{i:03}"),
                frames: fitted,
                labels,
                split: split_for(i, n_sequences),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let names = au_names(n_aus);
    Ok(assemble(Task::Au, seed, names, mapping, offsets.to_vec(), opts, sequences, model.k_ex()))
}

pub fn au_names(n: usize) -> Vec<String> {
    if n == AU_NAMES.len() {
        AU_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=n).map(|i| format!("AU{i:02}")).collect()
    }
}

/// Seeded K×L Gaussian mapping with entries of standard deviation `scale/√K`.
pub fn random_mapping(seed: u64, k: usize, l: usize, scale: f64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX));
    let sd = scale / (k as f64).sqrt();
    Matrix::from_fn(k, l, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        sd * z
    })
}

/// Seeded AU offsets, uniform in [−0.5, 1.5).
pub fn random_offsets(seed: u64, l: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX - 1));
    (0..l).map(|_| rng.random_range(-0.5..1.5)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face3dmm::make_toy_model;

    #[test]
    fn splits_cover_train_val_test() {
        let s: Vec<Split> = (0..10).map(|i| split_for(i, 10)).collect();
        assert_eq!(s.iter().filter(|x| **x == Split::Val).count(), 2);
        assert_eq!(s.iter().filter(|x| **x == Split::Test).count(), 2);
        assert_eq!(split_for(1, 2), Split::Val);
        assert_eq!(split_for(0, 1), Split::Train);
    }

    #[test]
    fn recovered_features_equal_true_coefficients() {
        let model = make_toy_model(1, 20, 4, 5).unwrap();
        let seqs = expression_sequences(9, 2, 30, &model, &SynthOptions::default()).unwrap();
        for (truth, fitted) in seqs {
            for (a, b) in truth.as_slice().iter().zip(fitted.as_slice()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_mapping_gives_near_zero_labels() {
        let model = make_toy_model(1, 20, 4, 5).unwrap();
        let out = synth_va_dataset(3, 3, 50, &model, &Matrix::zeros(5, 2), &SynthOptions::default()).unwrap();
        let all: Vec<f64> = out.dataset.sequences.iter().flat_map(|s| s.labels.as_slice().to_vec()).collect();
        let rms = (all.iter().map(|v| v * v).sum::<f64>() / all.len() as f64).sqrt();
        assert!((0.008..0.012).contains(&rms), "rms {rms}");
        assert!(all.iter().all(|v| v.abs() <= 0.05));
    }

    #[test]
    fn au_labels_are_clipped_and_offsets_show_through() {
        let model = make_toy_model(1, 20, 4, 5).unwrap();
        let mapping = random_mapping(2, 5, 3, 8.0);
        let offsets = [-0.3, 0.7, 6.0];
        let out = synth_au_dataset(2, 3, 60, &model, &mapping, &offsets, &SynthOptions::default()).unwrap();
        for s in &out.dataset.sequences {
            assert!(s.labels.as_slice().iter().all(|v| (0.0..=5.0).contains(v)));
        }
        let still = SynthOptions {
            noise_sigma: 0.0,
            amplitude_scale: 0.0,
        };
        let out = synth_au_dataset(2, 2, 10, &model, &mapping, &offsets, &still).unwrap();
        for s in &out.dataset.sequences {
            for row in s.labels.row_iter() {
                assert_eq!(row, &[0.0, 0.7, 5.0]);
            }
        }
    }
}
