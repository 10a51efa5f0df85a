//! Two-layer bidirectional GRU with a per-frame linear head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gru::{BiGruLayer, LayerCache};
use crate::linalg::{gemm, Matrix, Op};
use crate::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_DROPOUT_GRU: f64 = 0.5;
pub const DEFAULT_DROPOUT_HEAD: f64 = 0.25;

/// `layer1 → dropout(gru) → layer2 → dropout(head) → linear head`, applied to
/// every frame of a T×D sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiGruRegressor {
    pub layer1: BiGruLayer,
    pub layer2: BiGruLayer,
    /// L×2H
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
    pub dropout_gru: f64,
    pub dropout_head: f64,
    /// Bumped whenever parameters are handed out mutably; forward caches
    /// remember it so a stale cache is detected in [`BiGruRegressor::backward`].
    #[serde(skip)]
    generation: u64,
}

impl PartialEq for BiGruRegressor {
    fn eq(&self, other: &Self) -> bool {
        self.layer1 == other.layer1
            && self.layer2 == other.layer2
            && self.head_w == other.head_w
            && self.head_b == other.head_b
            && self.dropout_gru == other.dropout_gru
            && self.dropout_head == other.dropout_head
    }
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache {
    generation: u64,
    x: Matrix,
    l1: LayerCache,
    mask1: Option<Matrix>,
    y1: Matrix,
    l2: LayerCache,
    mask2: Option<Matrix>,
    y2: Matrix,
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep })
}

fn apply_mask(y: &mut Matrix, mask: &Option<Matrix>) {
    if let Some(m) = mask {
        y.as_mut_slice()
            .iter_mut()
            .zip(m.as_slice())
            .for_each(|(v, k)| *v *= k);
    }
}

impl BiGruRegressor {
    /// Seeded initialization: weights uniform in ±1/√H, biases zero.
    pub fn new(input: usize, hidden: usize, outputs: usize, seed: u64) -> Result<Self> {
        if input == 0 || hidden == 0 || outputs == 0 {
            return Err(Error::InvalidArgument(format!(
                "model sizes must be positive (input {input}, hidden {hidden}, outputs {outputs})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer1 = BiGruLayer::init(input, hidden, &mut rng);
        let layer2 = BiGruLayer::init(2 * hidden, hidden, &mut rng);
        let bound = 1.0 / (hidden as f64).sqrt();
        let head_w = Matrix::from_fn(outputs, 2 * hidden, |_, _| rng.random_range(-bound..bound));
        Ok(BiGruRegressor {
            layer1,
            layer2,
            head_w,
            head_b: vec![0.0; outputs],
            dropout_gru: DEFAULT_DROPOUT_GRU,
            dropout_head: DEFAULT_DROPOUT_HEAD,
            generation: 0,
        })
    }

    pub fn with_dropout(mut self, gru: f64, head: f64) -> Result<Self> {
        for p in [gru, head] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("dropout {p} outside [0, 1)")));
            }
        }
        self.dropout_gru = gru;
        self.dropout_head = head;
        Ok(self)
    }

    /// Same architecture with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let h = self.hidden();
        BiGruRegressor {
            layer1: BiGruLayer::zeros(self.input_dim(), h),
            layer2: BiGruLayer::zeros(2 * h, h),
            head_w: Matrix::zeros(self.outputs(), 2 * h),
            head_b: vec![0.0; self.outputs()],
            dropout_gru: self.dropout_gru,
            dropout_head: self.dropout_head,
            generation: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer1.forward.input()
    }

    pub fn hidden(&self) -> usize {
        self.layer1.hidden()
    }

    pub fn outputs(&self) -> usize {
        self.head_b.len()
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors in a fixed order, matching [`Self::tensor_names`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(18);
        for layer in [&self.layer1, &self.layer2] {
            for dir in [&layer.forward, &layer.backward] {
                out.extend(dir.tensors());
            }
        }
        out.push(self.head_w.as_slice());
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let mut out = Vec::with_capacity(18);
        for layer in [&mut self.layer1, &mut self.layer2] {
            let BiGruLayer { forward, backward } = layer;
            out.extend(forward.tensors_mut());
            out.extend(backward.tensors_mut());
        }
        out.push(self.head_w.as_mut_slice());
        out.push(&mut self.head_b);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(18);
        for layer in ["layer1", "layer2"] {
            for dir in ["forward", "backward"] {
                for t in super::gru::GruDirection::TENSOR_NAMES {
                    out.push(format!("{layer}.{dir}.{t}"));
                }
            }
        }
        out.push("head.w".into());
        out.push("head.b".into());
        out
    }

    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(18);
        for layer in [&self.layer1, &self.layer2] {
            for dir in [&layer.forward, &layer.backward] {
                out.extend(dir.tensor_shapes());
            }
        }
        out.push(vec![self.outputs(), 2 * self.hidden()]);
        out.push(vec![self.outputs()]);
        out
    }

    /// Runs the network over a T×D sequence. In train mode the dropout masks
    /// are drawn from `rng_seed`, so repeating a call with the same seed
    /// replays them; eval mode ignores the seed and is deterministic.
    pub fn forward(&self, seq: &Matrix, train_mode: bool, rng_seed: u64) -> Result<(Matrix, ForwardCache)> {
        if seq.rows() == 0 {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        if seq.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "model expects {} features per frame, got {}",
                self.input_dim(),
                seq.cols()
            )));
        }
        let t_len = seq.rows();
        let h2 = 2 * self.hidden();
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut mask = |p: f64| (train_mode && p > 0.0).then(|| dropout_mask(t_len, h2, p, &mut rng));

        let l1 = self.layer1.forward_cached(seq);
        let mut y1 = BiGruLayer::output(&l1);
        let mask1 = mask(self.dropout_gru);
        apply_mask(&mut y1, &mask1);

        let l2 = self.layer2.forward_cached(&y1);
        let mut y2 = BiGruLayer::output(&l2);
        let mask2 = mask(self.dropout_head);
        apply_mask(&mut y2, &mask2);

        let mut out = Matrix::zeros(t_len, self.outputs());
        gemm(Op::N, Op::T, 1.0, y2.view(), self.head_w.view(), 0.0, out.view_mut());
        for t in 0..t_len {
            for (o, b) in out.row_mut(t).iter_mut().zip(&self.head_b) {
                *o += b;
            }
        }
        let cache = ForwardCache {
            generation: self.generation,
            x: seq.clone(),
            l1,
            mask1,
            y1,
            l2,
            mask2,
            y2,
        };
        Ok((out, cache))
    }

    /// Eval-mode prediction.
    pub fn predict(&self, seq: &Matrix) -> Result<Matrix> {
        Ok(self.forward(seq, false, 0)?.0)
    }

    /// Exact gradients of `Σ d_outputs ∘ outputs` with respect to every
    /// parameter, by backpropagation through time.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Matrix) -> Result<BiGruRegressor> {
        if cache.generation != self.generation {
            return Err(Error::InvalidArgument(
                "stale forward cache: parameters changed since the forward pass".into(),
            ));
        }
        if d_out.shape() != (cache.x.rows(), self.outputs()) {
            return Err(Error::Dimension(format!(
                "output gradient is {:?}, expected {:?}",
                d_out.shape(),
                (cache.x.rows(), self.outputs())
            )));
        }
        let mut grad = self.zeros_like();
        let t_len = cache.x.rows();

        gemm(Op::T, Op::N, 1.0, d_out.view(), cache.y2.view(), 0.0, grad.head_w.view_mut());
        for t in 0..t_len {
            for (g, d) in grad.head_b.iter_mut().zip(d_out.row(t)) {
                *g += d;
            }
        }
        let mut d_y2 = Matrix::zeros(t_len, 2 * self.hidden());
        gemm(Op::N, Op::N, 1.0, d_out.view(), self.head_w.view(), 0.0, d_y2.view_mut());
        apply_mask(&mut d_y2, &cache.mask2);

        let mut d_y1 = self.layer2.backward(&cache.y1, &cache.l2, &d_y2, &mut grad.layer2);
        apply_mask(&mut d_y1, &cache.mask1);
        self.layer1.backward(&cache.x, &cache.l1, &d_y1, &mut grad.layer1);
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize, d: usize) -> Matrix {
        Matrix::from_fn(t, d, |i, j| ((i * d + j) as f64 * 0.71).cos())
    }

    #[test]
    fn output_shape_and_eval_determinism() {
        let m = BiGruRegressor::new(10, 8, 2, 1).unwrap();
        let x = seq(5, 10);
        let a = m.predict(&x).unwrap();
        assert_eq!(a.shape(), (5, 2));
        assert_eq!(a, m.predict(&x).unwrap());
        assert_eq!(a, m.forward(&x, false, 99).unwrap().0);
    }

    #[test]
    fn rejects_empty_and_mismatched_sequences() {
        let m = BiGruRegressor::new(3, 4, 2, 1).unwrap();
        assert!(m.forward(&Matrix::zeros(0, 3), false, 0).is_err());
        assert!(m.forward(&Matrix::zeros(2, 4), false, 0).is_err());
    }

    #[test]
    fn zero_head_weights_output_bias() {
        let mut m = BiGruRegressor::new(4, 6, 2, 3).unwrap();
        m.head_w = Matrix::zeros(2, 12);
        m.head_b = vec![0.25, -1.5];
        let out = m.forward(&seq(7, 4), true, 5).unwrap().0;
        for row in out.row_iter() {
            assert_eq!(row, &[0.25, -1.5]);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = BiGruRegressor::new(2, 3, 1, 0).unwrap();
        let x = seq(4, 2);
        let (_, cache) = m.forward(&x, false, 0).unwrap();
        m.tensors_mut()[0][0] += 0.1;
        assert!(m.backward(&cache, &Matrix::zeros(4, 1)).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let m = BiGruRegressor::new(3, 4, 2, 8).unwrap();
        let x = seq(6, 3);
        let (_, cache) = m.forward(&x, true, 17).unwrap();
        let g = m.backward(&cache, &Matrix::zeros(6, 2)).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn tensor_metadata_lines_up() {
        let m = BiGruRegressor::new(3, 4, 2, 8).unwrap();
        let names = m.tensor_names();
        let shapes = m.tensor_shapes();
        let tensors = m.tensors();
        assert_eq!(names.len(), tensors.len());
        for (s, t) in shapes.iter().zip(&tensors) {
            assert_eq!(s.iter().product::<usize>(), t.len());
        }
    }
}
