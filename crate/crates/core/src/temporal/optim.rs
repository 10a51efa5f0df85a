//! Adam with coupled L2 weight decay, and cosine annealing with warm restarts.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(shapes: &[usize], config: AdamConfig) -> Self {
        AdamState {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    /// One Adam update. Weight decay is added to the gradient (`g + wd·p`)
    /// before the moment updates.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "{} parameter tensors and {} gradients for {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Dimension(format!(
                    "tensor of {} values with gradient of {} and state of {}",
                    p.len(),
                    g.len(),
                    m.len()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i] + weight_decay * p[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// SGDR schedule: cosine decay from `lr0` to `eta_min` over cycles of
/// `t0, t0·t_mult, t0·t_mult², …` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineWarmRestarts {
    pub lr0: f64,
    pub t0: usize,
    pub t_mult: usize,
    pub eta_min: f64,
}

impl Default for CosineWarmRestarts {
    fn default() -> Self {
        CosineWarmRestarts {
            lr0: 1e-4,
            t0: 10,
            t_mult: 2,
            eta_min: 1e-6,
        }
    }
}

impl CosineWarmRestarts {
    pub fn validate(&self) -> Result<()> {
        if self.t0 == 0 || self.t_mult == 0 || !(self.lr0 > 0.0) || self.eta_min < 0.0 || self.eta_min > self.lr0 {
            return Err(Error::InvalidArgument(format!("invalid scheduler settings {self:?}")));
        }
        Ok(())
    }

    /// Epochs since the last restart and the length of the current cycle.
    pub fn position(&self, epoch: usize) -> (usize, usize) {
        let mut t_i = self.t0.max(1);
        let mut t_cur = epoch;
        while t_cur >= t_i {
            t_cur -= t_i;
            t_i = t_i.saturating_mul(self.t_mult.max(1));
        }
        (t_cur, t_i)
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        let (t_cur, t_i) = self.position(epoch);
        cosine_lr(self.lr0, self.eta_min, t_cur as f64, t_i as f64)
    }
}

/// `η_min + ½(lr0 − η_min)(1 + cos(π·t_cur/t_i))`
pub fn cosine_lr(lr0: f64, eta_min: f64, t_cur: f64, t_i: f64) -> f64 {
    eta_min + 0.5 * (lr0 - eta_min) * (1.0 + (std::f64::consts::PI * t_cur / t_i).cos())
}

pub fn cosine_warm_restart_lr(epoch: usize, schedule: &CosineWarmRestarts) -> f64 {
    schedule.lr(epoch)
}
