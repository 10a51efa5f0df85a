//! Mini-batch training loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::model::{BiGruRegressor, DEFAULT_DROPOUT_GRU, DEFAULT_DROPOUT_HEAD, DEFAULT_HIDDEN};
use super::optim::{AdamConfig, AdamState, CosineWarmRestarts};
use crate::dataio::{window_spans, DEFAULT_WINDOW_LEN};
use crate::exec::Exec;
use crate::linalg::Matrix;
use crate::metrics::{Aggregation, MetricsReport};
use crate::seed::mix_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub t0: usize,
    pub t_mult: usize,
    pub eta_min: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        let d = CosineWarmRestarts::default();
        SchedulerConfig {
            t0: d.t0,
            t_mult: d.t_mult,
            eta_min: d.eta_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub lr0: f64,
    pub weight_decay: f64,
    pub batch_sequences: usize,
    pub seq_len: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub scheduler: SchedulerConfig,
    pub seed: u64,
    pub hidden: usize,
    pub dropout_gru: f64,
    pub dropout_head: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::VaCccMse,
            lr0: 1e-4,
            weight_decay: 1e-4,
            batch_sequences: 4,
            seq_len: DEFAULT_WINDOW_LEN,
            epochs: 150,
            adam: AdamConfig::default(),
            scheduler: SchedulerConfig::default(),
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            dropout_gru: DEFAULT_DROPOUT_GRU,
            dropout_head: DEFAULT_DROPOUT_HEAD,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> CosineWarmRestarts {
        CosineWarmRestarts {
            lr0: self.lr0,
            t0: self.scheduler.t0,
            t_mult: self.scheduler.t_mult,
            eta_min: self.scheduler.eta_min,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("train config: {m}")));
        if self.batch_sequences == 0 {
            return bad("batch_sequences must be positive");
        }
        if self.seq_len < 2 {
            return bad("seq_len must be at least 2");
        }
        if self.hidden == 0 {
            return bad("hidden must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        for p in [self.dropout_gru, self.dropout_head] {
            if !(0.0..1.0).contains(&p) {
                return bad("dropout must lie in [0, 1)");
            }
        }
        self.schedule().validate()
    }

    /// Task metric used for model selection: mean CCC for valence/arousal,
    /// mean ICC for AU intensities.
    pub fn score(&self, report: &MetricsReport) -> f64 {
        match self.loss_kind {
            LossKind::VaCccMse => report.mean_ccc(),
            LossKind::AuMse => report.mean_icc(),
        }
    }
}

/// Features and labels of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePair {
    /// T×D
    pub features: Matrix,
    /// T×L
    pub labels: Matrix,
}

pub struct TrainData {
    pub train: Vec<SequencePair>,
    pub val: Vec<SequencePair>,
    pub label_names: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub exec: Exec,
    /// Global index of the first epoch; drives the schedule and the shuffles
    /// so a resumed run continues where the previous one stopped.
    pub start_epoch: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            exec: Exec::default(),
            start_epoch: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_score: f64,
    pub val_report: MetricsReport,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score.
    pub best: BiGruRegressor,
    pub best_epoch: Option<usize>,
    pub last: BiGruRegressor,
    pub history: Vec<EpochRecord>,
}

struct WindowRef {
    seq: usize,
    start: usize,
    len: usize,
}

fn slice(m: &Matrix, w: &WindowRef) -> Matrix {
    m.slice_rows(w.start, w.start + w.len)
}

/// Mean loss and mean parameter gradient over a batch of windows. Window `i`
/// draws its dropout masks from `seeds[i]`.
pub fn batch_gradient(
    model: &BiGruRegressor,
    loss: LossKind,
    windows: &[(Matrix, Matrix)],
    seeds: &[u64],
    exec: Exec,
) -> Result<(f64, BiGruRegressor)> {
    if windows.is_empty() || windows.len() != seeds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} windows with {} seeds",
            windows.len(),
            seeds.len()
        )));
    }
    let items: Vec<(&(Matrix, Matrix), u64)> = windows.iter().zip(seeds.iter().copied()).collect();
    let results = exec.map(&items, |&((x, y), seed)| -> Result<(f64, BiGruRegressor)> {
        let (pred, cache) = model.forward(x, true, seed)?;
        let (value, d_out) = loss.value_and_grad(&pred, y)?;
        Ok((value, model.backward(&cache, &d_out)?))
    });
    let scale = 1.0 / windows.len() as f64;
    let mut total = model.zeros_like();
    let mut loss_sum = 0.0;
    for r in results {
        let (value, grad) = r?;
        loss_sum += value;
        for (acc, g) in total.tensors_mut().into_iter().zip(grad.tensors()) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    for t in total.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss_sum * scale, total))
}

/// Eval-mode predictions for whole sequences, computed window by window
/// (`seq_len` frames each; the tail window may be shorter).
pub fn predict_sequences(model: &BiGruRegressor, sequences: &[&Matrix], seq_len: usize, exec: Exec) -> Result<Vec<Matrix>> {
    let (preds, _) = predict_with_loss(model, sequences, None, seq_len, LossKind::AuMse, exec)?;
    Ok(preds)
}

fn prediction_windows(lengths: &[usize], seq_len: usize) -> Vec<WindowRef> {
    let mut out = Vec::new();
    for (seq, &t_len) in lengths.iter().enumerate() {
        let mut start = 0;
        while start < t_len {
            let len = seq_len.min(t_len - start);
            out.push(WindowRef { seq, start, len });
            start += len;
        }
    }
    out
}

/// Returns per-sequence predictions and, when labels are given, the mean loss
/// over windows with at least two frames.
fn predict_with_loss(
    model: &BiGruRegressor,
    sequences: &[&Matrix],
    labels: Option<&[&Matrix]>,
    seq_len: usize,
    loss: LossKind,
    exec: Exec,
) -> Result<(Vec<Matrix>, f64)> {
    let lengths: Vec<usize> = sequences.iter().map(|m| m.rows()).collect();
    let windows = prediction_windows(&lengths, seq_len);
    let results = exec.map(&windows, |w| -> Result<(Matrix, Option<f64>)> {
        let pred = model.predict(&slice(sequences[w.seq], w))?;
        let value = match labels {
            Some(l) if w.len >= 2 => Some(loss.value(&pred, &slice(l[w.seq], w))?),
            _ => None,
        };
        Ok((pred, value))
    });
    let mut preds: Vec<Matrix> = lengths.iter().map(|&t| Matrix::zeros(t, model.outputs())).collect();
    let (mut loss_sum, mut n_loss) = (0.0, 0usize);
    for (w, r) in windows.iter().zip(results) {
        let (pred, value) = r?;
        for i in 0..w.len {
            preds[w.seq].row_mut(w.start + i).copy_from_slice(pred.row(i));
        }
        if let Some(v) = value {
            loss_sum += v;
            n_loss += 1;
        }
    }
    let mean = if n_loss > 0 { loss_sum / n_loss as f64 } else { f64::NAN };
    Ok((preds, mean))
}

pub fn train(data: &TrainData, model: BiGruRegressor, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(data, model, cfg, &TrainOptions::default())
}

pub fn train_with(
    data: &TrainData,
    model: BiGruRegressor,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            best: model.clone(),
            best_epoch: None,
            last: model,
            history: Vec::new(),
        });
    }
    check_data(data, &model)?;

    let windows: Vec<WindowRef> = data
        .train
        .iter()
        .enumerate()
        .flat_map(|(seq, s)| {
            window_spans(s.features.rows(), cfg.seq_len, cfg.seq_len)
                .into_iter()
                .map(move |(start, len)| WindowRef { seq, start, len })
        })
        .collect();
    if windows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "training split has no windows of at least 2 frames (seq_len {})",
            cfg.seq_len
        )));
    }

    let schedule = cfg.schedule();
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut adam = AdamState::new(&shapes, cfg.adam);
    let mut model = model;
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_score = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(cfg.epochs);
    let val_x: Vec<&Matrix> = data.val.iter().map(|s| &s.features).collect();
    let val_y: Vec<&Matrix> = data.val.iter().map(|s| &s.labels).collect();
    let val_targets: Vec<Matrix> = data.val.iter().map(|s| s.labels.clone()).collect();

    for e in 0..cfg.epochs {
        let epoch = opts.start_epoch + e;
        let lr = schedule.lr(epoch);
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2 * epoch as u64)));

        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_sequences).enumerate() {
            let batch: Vec<(Matrix, Matrix)> = chunk
                .iter()
                .map(|&i| {
                    let w = &windows[i];
                    let s = &data.train[w.seq];
                    (slice(&s.features, w), slice(&s.labels, w))
                })
                .collect();
            let epoch_seed = mix_seed(cfg.seed, 2 * epoch as u64 + 1);
            let seeds: Vec<u64> = chunk.iter().map(|&i| mix_seed(epoch_seed, i as u64)).collect();
            let (loss, grad) = batch_gradient(&model, cfg.loss_kind, &batch, &seeds, opts.exec)?;
            if !loss.is_finite() || !grad.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())) {
                return Err(Error::Diverged(format!(
                    "epoch {epoch}, batch {b}: loss {loss} (lr {lr:.3e})"
                )));
            }
            let grads = grad.tensors();
            adam.step(&mut model.tensors_mut(), &grads, lr, cfg.weight_decay)?;
            epoch_loss += loss;
            n_batches += 1;
        }

        let (val_preds, val_loss) =
            predict_with_loss(&model, &val_x, Some(&val_y), cfg.seq_len, cfg.loss_kind, opts.exec)?;
        let report = MetricsReport::compute(&data.label_names, &val_targets, &val_preds, Aggregation::Pooled)?;
        let score = cfg.score(&report);
        let train_loss = epoch_loss / n_batches as f64;
        log::info!("epoch {epoch}: lr {lr:.3e} train_loss {train_loss:.5} val_loss {val_loss:.5} val_score {score:.4}");
        if score > best_score {
            best_score = score;
            best_epoch = Some(epoch);
            best = model.clone();
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_score: score,
            val_report: report,
        });
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        history,
    })
}

fn check_data(data: &TrainData, model: &BiGruRegressor) -> Result<()> {
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if data.val.is_empty() {
        return Err(Error::InvalidArgument("validation split is empty".into()));
    }
    if data.label_names.len() != model.outputs() {
        return Err(Error::Dimension(format!(
            "{} label names for a model with {} outputs",
            data.label_names.len(),
            model.outputs()
        )));
    }
    for s in data.train.iter().chain(&data.val) {
        if s.features.cols() != model.input_dim() || s.labels.cols() != model.outputs() {
            return Err(Error::Dimension(format!(
                "sequence features {:?} / labels {:?} do not fit model {}→{}",
                s.features.shape(),
                s.labels.shape(),
                model.input_dim(),
                model.outputs()
            )));
        }
        if s.features.rows() != s.labels.rows() || s.features.rows() == 0 {
            return Err(Error::Dimension("sequence frame and label counts differ".into()));
        }
    }
    Ok(())
}

/// `epoch,lr,train_loss,val_loss,val.<dim>.<metric>...`
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data {
        path: path.into(),
        message: e.to_string(),
    })?;
    let metric_keys = history.first().map(|r| r.val_report.flat_keys()).unwrap_or_default();
    let header = ["epoch", "lr", "train_loss", "val_loss"]
        .into_iter()
        .map(String::from)
        .chain(metric_keys.iter().map(|k| format!("val.{k}")));
    let to_csv = |e: csv::Error| Error::Data {
        path: path.into(),
        message: e.to_string(),
    };
    w.write_record(header.collect::<Vec<_>>()).map_err(to_csv)?;
    for r in history {
        let vals = r.val_report.flat_values();
        let row = [r.epoch.to_string(), r.lr.to_string(), r.train_loss.to_string(), r.val_loss.to_string()]
            .into_iter()
            .chain(vals.iter().map(f64::to_string));
        w.write_record(row.collect::<Vec<_>>()).map_err(to_csv)?;
    }
    w.flush().map_err(io)
}
