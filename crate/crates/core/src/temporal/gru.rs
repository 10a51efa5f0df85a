//! GRU cell and bidirectional GRU layer with backpropagation through time.
//!
//! Gate convention (reset applied before the candidate's recurrent product,
//! with its own recurrent bias):
//!
//! ```text
//! r = σ(W_r x + U_r h + b_r)
//! z = σ(W_z x + U_z h + b_z)
//! n = tanh(W_n x + b_n + r ∘ (U_n h + b_hn))
//! h' = (1 − z) ∘ n + z ∘ h
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{gemm, matvec_into, matvec_t_acc, Matrix, Op};
use crate::{Error, Result};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of one recurrence direction. Gate blocks are stacked in the
/// order r, z, n along the rows of `w`, `u` and `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruDirection {
    /// 3H×D_in input weights `[W_r; W_z; W_n]`.
    pub w: Matrix,
    /// 3H×H recurrent weights `[U_r; U_z; U_n]`.
    pub u: Matrix,
    /// `[b_r; b_z; b_n]`
    pub b: Vec<f64>,
    pub b_hn: Vec<f64>,
}

impl GruDirection {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruDirection {
            w: Matrix::zeros(3 * hidden, input),
            u: Matrix::zeros(3 * hidden, hidden),
            b: vec![0.0; 3 * hidden],
            b_hn: vec![0.0; hidden],
        }
    }

    /// Weights uniform in ±1/√H, biases zero.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut p = GruDirection::zeros(input, hidden);
        for v in p.w.as_mut_slice().iter_mut().chain(p.u.as_mut_slice()) {
            *v = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.b_hn.len()
    }

    pub fn input(&self) -> usize {
        self.w.cols()
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 4] {
        [self.w.as_slice(), self.u.as_slice(), &self.b, &self.b_hn]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w.as_mut_slice(),
            self.u.as_mut_slice(),
            &mut self.b,
            &mut self.b_hn,
        ]
    }

    pub(crate) const TENSOR_NAMES: [&'static str; 4] = ["w", "u", "b", "b_hn"];

    pub(crate) fn tensor_shapes(&self) -> [Vec<usize>; 4] {
        let h = self.hidden();
        [
            vec![3 * h, self.input()],
            vec![3 * h, h],
            vec![3 * h],
            vec![h],
        ]
    }
}

/// One GRU step.
pub fn gru_cell_forward(x: &[f64], h_prev: &[f64], p: &GruDirection) -> Result<Vec<f64>> {
    let h = p.hidden();
    if x.len() != p.input() || h_prev.len() != h {
        return Err(Error::Dimension(format!(
            "cell expects input {} and state {h}, got {} and {}",
            p.input(),
            x.len(),
            h_prev.len()
        )));
    }
    let gi: Vec<f64> = p
        .w
        .matvec(x)
        .iter()
        .zip(&p.b)
        .map(|(a, b)| a + b)
        .collect();
    let gh = p.u.matvec(h_prev);
    let mut out = vec![0.0; h];
    for k in 0..h {
        let r = sigmoid(gi[k] + gh[k]);
        let z = sigmoid(gi[h + k] + gh[h + k]);
        let n = (gi[2 * h + k] + r * (gh[2 * h + k] + p.b_hn[k])).tanh();
        out[k] = (1.0 - z) * n + z * h_prev[k];
    }
    Ok(out)
}

/// Activations of one direction over a sequence, indexed by original time.
#[derive(Debug, Clone)]
pub(crate) struct DirectionCache {
    pub h: Matrix,
    r: Matrix,
    z: Matrix,
    n: Matrix,
    /// `U_n h_prev + b_hn`
    ghn: Matrix,
}

fn step_order(t_len: usize, reverse: bool) -> impl Iterator<Item = usize> {
    (0..t_len).map(move |s| if reverse { t_len - 1 - s } else { s })
}

pub(crate) fn forward_direction(p: &GruDirection, x: &Matrix, reverse: bool) -> DirectionCache {
    let t_len = x.rows();
    let h = p.hidden();
    let mut gi = Matrix::zeros(t_len, 3 * h);
    gemm(Op::N, Op::T, 1.0, x.view(), p.w.view(), 0.0, gi.view_mut());
    let mut cache = DirectionCache {
        h: Matrix::zeros(t_len, h),
        r: Matrix::zeros(t_len, h),
        z: Matrix::zeros(t_len, h),
        n: Matrix::zeros(t_len, h),
        ghn: Matrix::zeros(t_len, h),
    };
    let mut h_prev = vec![0.0; h];
    let mut gh = vec![0.0; 3 * h];
    for t in step_order(t_len, reverse) {
        matvec_into(3 * h, h, p.u.as_slice(), &h_prev, &mut gh);
        let gi_t = gi.row(t);
        for k in 0..h {
            let r = sigmoid(gi_t[k] + p.b[k] + gh[k]);
            let z = sigmoid(gi_t[h + k] + p.b[h + k] + gh[h + k]);
            let ghn = gh[2 * h + k] + p.b_hn[k];
            let n = (gi_t[2 * h + k] + p.b[2 * h + k] + r * ghn).tanh();
            let hk = (1.0 - z) * n + z * h_prev[k];
            cache.r.set(t, k, r);
            cache.z.set(t, k, z);
            cache.n.set(t, k, n);
            cache.ghn.set(t, k, ghn);
            cache.h.set(t, k, hk);
            h_prev[k] = hk;
        }
    }
    cache
}

/// Accumulates parameter gradients into `grad` and returns the gradient with
/// respect to the direction's input sequence.
pub(crate) fn backward_direction(
    p: &GruDirection,
    x: &Matrix,
    cache: &DirectionCache,
    d_h: &Matrix,
    reverse: bool,
    grad: &mut GruDirection,
) -> Matrix {
    let t_len = x.rows();
    let h = p.hidden();
    let mut d_gi = Matrix::zeros(t_len, 3 * h);
    let mut d_gh = Matrix::zeros(t_len, 3 * h);
    let mut h_prev_all = Matrix::zeros(t_len, h);
    let mut carry = vec![0.0; h];
    let mut next_carry = vec![0.0; h];

    let order: Vec<usize> = step_order(t_len, reverse).collect();
    for s in (0..t_len).rev() {
        let t = order[s];
        let prev = if s > 0 { Some(cache.h.row(order[s - 1])) } else { None };
        if let Some(prev) = prev {
            h_prev_all.row_mut(t).copy_from_slice(prev);
        }
        let (r, z, n, ghn) = (cache.r.row(t), cache.z.row(t), cache.n.row(t), cache.ghn.row(t));
        let dh_up = d_h.row(t);
        {
            let dgi = d_gi.row_mut(t);
            for k in 0..h {
                let dh = dh_up[k] + carry[k];
                let hp = prev.map_or(0.0, |p| p[k]);
                let dz = dh * (hp - n[k]);
                let dn = dh * (1.0 - z[k]);
                let da_n = dn * (1.0 - n[k] * n[k]);
                let da_z = dz * z[k] * (1.0 - z[k]);
                let da_r = da_n * ghn[k] * r[k] * (1.0 - r[k]);
                dgi[k] = da_r;
                dgi[h + k] = da_z;
                dgi[2 * h + k] = da_n;
                next_carry[k] = dh * z[k];
            }
        }
        {
            let dgi = d_gi.row(t);
            let dgh = d_gh.row_mut(t);
            for k in 0..h {
                dgh[k] = dgi[k];
                dgh[h + k] = dgi[h + k];
                dgh[2 * h + k] = dgi[2 * h + k] * r[k];
            }
        }
        matvec_t_acc(h, p.u.as_slice(), d_gh.row(t), &mut next_carry);
        std::mem::swap(&mut carry, &mut next_carry);
    }

    gemm(Op::T, Op::N, 1.0, d_gi.view(), x.view(), 1.0, grad.w.view_mut());
    gemm(Op::T, Op::N, 1.0, d_gh.view(), h_prev_all.view(), 1.0, grad.u.view_mut());
    for t in 0..t_len {
        for (gb, d) in grad.b.iter_mut().zip(d_gi.row(t)) {
            *gb += d;
        }
        for (gb, d) in grad.b_hn.iter_mut().zip(&d_gh.row(t)[2 * h..]) {
            *gb += d;
        }
    }
    let mut d_x = Matrix::zeros(t_len, p.input());
    gemm(Op::N, Op::N, 1.0, d_gi.view(), p.w.view(), 0.0, d_x.view_mut());
    d_x
}

/// Forward and backward GRU directions whose states are concatenated per
/// frame into a T×2H output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiGruLayer {
    pub forward: GruDirection,
    pub backward: GruDirection,
}

pub(crate) struct LayerCache {
    fwd: DirectionCache,
    bwd: DirectionCache,
}

impl BiGruLayer {
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        BiGruLayer {
            forward: GruDirection::init(input, hidden, rng),
            backward: GruDirection::init(input, hidden, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiGruLayer {
            forward: GruDirection::zeros(input, hidden),
            backward: GruDirection::zeros(input, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    /// Same layer with the two directions swapped.
    pub fn mirrored(&self) -> Self {
        BiGruLayer {
            forward: self.backward.clone(),
            backward: self.forward.clone(),
        }
    }

    /// Returns the forward-direction and backward-direction state sequences,
    /// each T×H and indexed by original time.
    pub fn run(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_input(x)?;
        let c = self.forward_cached(x);
        Ok((c.fwd.h, c.bwd.h))
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.forward.input() {
            return Err(Error::Dimension(format!(
                "layer expects {} input features, got {}",
                self.forward.input(),
                x.cols()
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> LayerCache {
        LayerCache {
            fwd: forward_direction(&self.forward, x, false),
            bwd: forward_direction(&self.backward, x, true),
        }
    }

    pub(crate) fn output(cache: &LayerCache) -> Matrix {
        let (t_len, h) = cache.fwd.h.shape();
        let mut y = Matrix::zeros(t_len, 2 * h);
        for t in 0..t_len {
            let row = y.row_mut(t);
            row[..h].copy_from_slice(cache.fwd.h.row(t));
            row[h..].copy_from_slice(cache.bwd.h.row(t));
        }
        y
    }

    pub(crate) fn backward(
        &self,
        x: &Matrix,
        cache: &LayerCache,
        d_y: &Matrix,
        grad: &mut BiGruLayer,
    ) -> Matrix {
        let h = self.hidden();
        let t_len = x.rows();
        let mut d_f = Matrix::zeros(t_len, h);
        let mut d_b = Matrix::zeros(t_len, h);
        for t in 0..t_len {
            let row = d_y.row(t);
            d_f.row_mut(t).copy_from_slice(&row[..h]);
            d_b.row_mut(t).copy_from_slice(&row[h..]);
        }
        let mut d_x = backward_direction(&self.forward, x, &cache.fwd, &d_f, false, &mut grad.forward);
        let d_xb = backward_direction(&self.backward, x, &cache.bwd, &d_b, true, &mut grad.backward);
        for (a, b) in d_x.as_mut_slice().iter_mut().zip(d_xb.as_slice()) {
            *a += b;
        }
        d_x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_hand_values() {
        let p = GruDirection::zeros(1, 1);
        // z = 0.5, n = 0: h = 0.5 · h_prev
        assert_eq!(gru_cell_forward(&[0.3], &[1.0], &p).unwrap(), vec![0.5]);
        assert_eq!(gru_cell_forward(&[0.3], &[0.0], &p).unwrap(), vec![0.0]);
    }

    #[test]
    fn cell_rejects_shape_mismatch() {
        let p = GruDirection::zeros(2, 3);
        assert!(gru_cell_forward(&[0.0], &[0.0; 3], &p).is_err());
        assert!(gru_cell_forward(&[0.0; 2], &[0.0; 2], &p).is_err());
    }

    #[test]
    fn sequence_run_matches_repeated_cell_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GruDirection::init(3, 4, &mut rng);
        let x = Matrix::from_fn(6, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let cache = forward_direction(&p, &x, false);
        let mut h = vec![0.0; 4];
        for t in 0..6 {
            h = gru_cell_forward(x.row(t), &h, &p).unwrap();
            for k in 0..4 {
                assert!((h[k] - cache.h.get(t, k)).abs() < 1e-14);
            }
        }
    }
}
