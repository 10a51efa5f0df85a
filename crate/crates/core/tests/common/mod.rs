//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use affectlab::linalg::Matrix;
use affectlab::temporal::{BiGruRegressor, LossKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance by the two-pass formula.
fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

fn cov(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64
}

/// Lin's concordance written as `2·cov / (var_x + var_y + (μx − μy)²)`.
pub fn ccc(x: &[f64], y: &[f64]) -> f64 {
    let d = var(x) + var(y) + (mean(x) - mean(y)).powi(2);
    if d == 0.0 {
        1.0
    } else {
        2.0 * cov(x, y) / d
    }
}

pub fn pcc(x: &[f64], y: &[f64]) -> f64 {
    let (vx, vy) = (var(x), var(y));
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov(x, y) / (vx.sqrt() * vy.sqrt())
    }
}

pub fn mse(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

pub fn acc(x: &[f64], y: &[f64]) -> f64 {
    1.0 - x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64
}

/// ICC(3,1) from an explicit two-way ANOVA table on an n×k list of rows.
pub fn icc31_anova(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let k = rows[0].len();
    let grand: f64 = rows.iter().flatten().sum::<f64>() / (n * k) as f64;
    let row_means: Vec<f64> = rows.iter().map(|r| mean(r)).collect();
    let col_means: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut ss_rows = 0.0;
    let mut ss_err = 0.0;
    for (i, r) in rows.iter().enumerate() {
        ss_rows += k as f64 * (row_means[i] - grand).powi(2);
        for j in 0..k {
            ss_err += (r[j] - row_means[i] - col_means[j] + grand).powi(2);
        }
    }
    let bms = ss_rows / (n - 1) as f64;
    let ems = ss_err / ((n - 1) * (k - 1)) as f64;
    (bms - ems) / (bms + (k - 1) as f64 * ems)
}

pub fn random_series(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let scale = rng.random_range(0.1..5.0);
    let shift = rng.random_range(-3.0..3.0);
    (0..n).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Max over all parameters of `|analytic − numeric| / max(|analytic|, |numeric|, floor)`,
/// with numeric gradients from central differences.
pub fn max_gradient_error(
    model: &BiGruRegressor,
    loss: LossKind,
    x: &Matrix,
    y: &Matrix,
    train_mode: bool,
    seed: u64,
    step: f64,
    floor: f64,
) -> (f64, usize) {
    let (pred, cache) = model.forward(x, train_mode, seed).unwrap();
    let (_, d_out) = loss.value_and_grad(&pred, y).unwrap();
    let grads = model.backward(&cache, &d_out).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

    let eval = |m: &BiGruRegressor| loss.value(&m.forward(x, train_mode, seed).unwrap().0, y).unwrap();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (t, a_tensor) in analytic.iter().enumerate() {
        for (i, &a) in a_tensor.iter().enumerate() {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + step;
            let up = eval(&probe);
            probe.tensors_mut()[t][i] = orig - step;
            let down = eval(&probe);
            probe.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

/// A small model with every weight and bias drawn from U(−0.5, 0.5).
pub fn random_model(input: usize, hidden: usize, outputs: usize, seed: u64, dropout: (f64, f64)) -> BiGruRegressor {
    let mut model = BiGruRegressor::new(input, hidden, outputs, seed)
        .unwrap()
        .with_dropout(dropout.0, dropout.1)
        .unwrap();
    let mut r = rng(seed ^ 0xfeed);
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v = r.random_range(-0.5..0.5);
        }
    }
    model
}

/// Random rotation from Gram-Schmidt on a Gaussian-ish matrix.
pub fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= p * ui;
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-3 {
            q.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    q
}

pub fn rigid_transform(x: &Matrix, rot: &[Vec<f64>], shift: &[f64]) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| {
        rot[j].iter().zip(x.row(i)).map(|(a, b)| a * b).sum::<f64>() + shift[j]
    })
}

/// `n_per` points per class around well separated centers.
pub fn clusters(rng: &mut ChaCha8Rng, centers: &[Vec<f64>], n_per: usize, sigma: f64) -> (Matrix, Vec<usize>) {
    let d = centers[0].len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per {
            for &m in center {
                let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                data.push(m + sigma * z);
            }
            labels.push(c);
        }
    }
    (Matrix::from_vec(labels.len(), d, data).unwrap(), labels)
}

/// Runs the CLI in-process.
pub fn cli(args: &[&str]) -> anyhow::Result<()> {
    use clap::Parser;
    let argv = std::iter::once("affectlab").chain(args.iter().copied());
    affectlab::cli::run(affectlab::cli::Cli::try_parse_from(argv)?)
}

pub fn read_json(path: &std::path::Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file under `dir`, relative path to bytes.
pub fn dir_contents(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        if e.file_type().unwrap().is_file() {
            out.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap());
        }
    }
    out
}
