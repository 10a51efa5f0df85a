//! The `affectlab` command line.
//!
//! Each command writes into a staging directory next to `--out` and moves the
//! files into place only after everything succeeded, together with a
//! `run.json` recording the resolved configuration and input digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{knn_loocv, linreg_fit, onevsrest_linreg, standardize_columns, CoefficientTable, KnnConfig};
use crate::dataio::{
    self, load_dataset, load_landmarks_csv, load_matrix_csv, make_windows, random_mapping, random_offsets,
    synth_au_dataset, synth_va_dataset, Dataset, DatasetManifest, LabelledSamples, Split, SynthOptions,
    DEFAULT_WINDOW_LEN, VA_NAMES,
};
use crate::face3dmm::{make_toy_model, project, MorphableModel, PoseParams};
use crate::features::{fit_pca, fit_quantile_scaler, Preprocessing};
use crate::linalg::Matrix;
use crate::metrics::{Aggregation, MetricsReport};
use crate::temporal::{
    predict_sequences, train_with, write_history_csv, BiGruRegressor, Checkpoint, LossKind, SequencePair, TrainConfig,
    TrainData, TrainOptions,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "affectlab", version, about = "Expression-embedding affect and AU modelling toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset from a toy morphable model.
    Synth(SynthArgs),
    /// Fit PCA to per-frame features and report explained variance.
    FitPca(FitPcaArgs),
    /// Train the BiGRU regressor.
    Train(TrainArgs),
    /// Score predictions or a checkpoint against dataset labels.
    Eval(EvalArgs),
    /// Linear correspondence between features and labels or classes.
    AnalyzeCorr(AnalyzeCorrArgs),
    /// kNN leave-one-out classification.
    KnnEval(KnnEvalArgs),
    /// Recover pose and shape coefficients from 2D landmarks.
    #[command(name = "fit-3dmm")]
    Fit3dmm(Fit3dmmArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskArg {
    Va,
    Au,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub sequences: usize,
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 34)]
    pub vertices: usize,
    #[arg(long, default_value_t = 10)]
    pub k_id: usize,
    #[arg(long, default_value_t = 10)]
    pub k_ex: usize,
    /// Number of AUs for `--task au`.
    #[arg(long, default_value_t = 5)]
    pub aus: usize,
    /// Generator mapping entries have standard deviation `scale/sqrt(k_ex)`.
    #[arg(long, default_value_t = 1.0)]
    pub mapping_scale: f64,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude_scale: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct FitPcaArgs {
    /// Dataset manifest; PCA is fitted on its training frames.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    pub data: Option<PathBuf>,
    /// Headered CSV whose columns are all features.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub components: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    VaCccMse,
    AuMse,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::VaCccMse => LossKind::VaCccMse,
            LossArg::AuMse => LossKind::AuMse,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run config: training fields plus `data`, `pca_components`,
    /// `quantile_normalize`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by a previous run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_sequences: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub pca_components: Option<usize>,
    #[arg(long)]
    pub quantile_normalize: bool,
    /// Run single-threaded.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Manifest of a dataset whose labels are predictions for `--data`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Average per-sequence scores instead of pooling frames.
    #[arg(long)]
    pub per_sequence: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeCorrArgs {
    /// Dataset manifest; every label is regressed on the features.
    #[arg(long, required_unless_present = "classes")]
    pub data: Option<PathBuf>,
    /// Class-labelled samples CSV for one-vs-rest regression.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Z-score features before fitting.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct KnnEvalArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub quantile_normalize: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct Fit3dmmArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub landmarks: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    /// Known camera; only coefficients are fitted.
    #[arg(long)]
    pub pose: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::FitPca(a) => cmd_fit_pca(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::AnalyzeCorr(a) => cmd_analyze_corr(&a),
        Command::KnnEval(a) => cmd_knn_eval(&a),
        Command::Fit3dmm(a) => cmd_fit_3dmm(&a),
    }
}

/// Output directory under construction.
struct Staging {
    dir: PathBuf,
    out: PathBuf,
    committed: bool,
}

impl Staging {
    fn new(out: &Path) -> anyhow::Result<Self> {
        let name = out
            .file_name()
            .with_context(|| format!("output path {} has no final component", out.display()))?;
        if out.exists() && !out.is_dir() {
            bail!("output path {} exists and is not a directory", out.display());
        }
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let dir = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        std::fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Staging {
            dir,
            out: out.to_path_buf(),
            committed: false,
        })
    }

    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn write_json<T: Serialize>(&self, file: &str, value: &T) -> anyhow::Result<()> {
        dataio::write_json(&self.path(file), value)?;
        Ok(())
    }

    fn commit(mut self) -> anyhow::Result<()> {
        if !self.out.exists() {
            std::fs::rename(&self.dir, &self.out)
                .with_context(|| format!("moving outputs to {}", self.out.display()))?;
        } else {
            let mut names: Vec<_> = std::fs::read_dir(&self.dir)?
                .map(|e| e.map(|e| e.file_name()))
                .collect::<std::io::Result<_>>()?;
            names.sort();
            for name in names {
                let dst = self.out.join(&name);
                std::fs::rename(self.dir.join(&name), &dst).with_context(|| format!("moving {}", dst.display()))?;
            }
            std::fs::remove_dir(&self.dir)?;
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.dir);
        }
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digests of input files, keyed by the path as given.
#[derive(Default)]
struct Inputs(BTreeMap<String, String>);

impl Inputs {
    fn file(&mut self, path: &Path) -> anyhow::Result<()> {
        self.0.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// The manifest and every sequence file it lists.
    fn dataset(&mut self, manifest: &Path) -> anyhow::Result<()> {
        self.file(manifest)?;
        let m: DatasetManifest = dataio::read_json(manifest)?;
        let base = manifest.parent().unwrap_or(Path::new(""));
        for e in &m.sequences {
            self.file(&base.join(&e.path))?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    config: Value,
    inputs: BTreeMap<String, String>,
}

fn write_run(staging: &Staging, command: &str, config: Value, inputs: Inputs) -> anyhow::Result<()> {
    staging.write_json(
        "run.json",
        &RunRecord {
            command,
            version: VERSION,
            config,
            inputs: inputs.0,
        },
    )
}

fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    let staging = Staging::new(&a.out)?;
    let model = make_toy_model(a.seed, a.vertices, a.k_id, a.k_ex)?;
    let opts = SynthOptions {
        noise_sigma: a.noise,
        amplitude_scale: a.amplitude_scale,
    };
    let out = match a.task {
        TaskArg::Va => {
            let mapping = random_mapping(a.seed, a.k_ex, VA_NAMES.len(), a.mapping_scale);
            synth_va_dataset(a.seed, a.sequences, a.frames, &model, &mapping, &opts)?
        }
        TaskArg::Au => {
            let mapping = random_mapping(a.seed, a.k_ex, a.aus, a.mapping_scale);
            synth_au_dataset(a.seed, a.sequences, a.frames, &model, &mapping, &random_offsets(a.seed, a.aus), &opts)?
        }
    };
    let windows = make_windows(&out.dataset, Some(Split::Train), DEFAULT_WINDOW_LEN, DEFAULT_WINDOW_LEN)?;
    if windows.is_empty() {
        log::warn!(
            "{} frames per sequence gives no trainable windows (at least {} frames needed)",
            a.frames,
            dataio::MIN_WINDOW_LEN
        );
    }
    out.write(&staging.dir)?;
    model.save_json(&staging.path("model.json"))?;
    write_run(&staging, "synth", serde_json::to_value(a)?, Inputs::default())?;
    staging.commit()
}

fn cmd_fit_pca(a: &FitPcaArgs) -> anyhow::Result<()> {
    if a.components == 0 {
        bail!("--components must be at least 1");
    }
    let mut inputs = Inputs::default();
    let data = match (&a.data, &a.features) {
        (Some(manifest), _) => {
            inputs.dataset(manifest)?;
            load_dataset(manifest)?.stacked_frames(Split::Train)?
        }
        (None, Some(csv)) => {
            inputs.file(csv)?;
            load_matrix_csv(csv)?.1
        }
        (None, None) => bail!("one of --data or --features is required"),
    };
    let staging = Staging::new(&a.out)?;
    let pca = fit_pca(&data, a.components)?;
    staging.write_json("pca.json", &pca)?;

    let path = staging.path("variance.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["component", "ratio", "cumulative"])?;
    let total: f64 = pca.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut cumulative = 0.0;
    for (i, ev) in pca.eigenvalues.iter().enumerate() {
        let ratio = if total > 0.0 { ev.max(0.0) / total } else { 0.0 };
        cumulative += ratio;
        w.write_record([(i + 1).to_string(), ratio.to_string(), cumulative.to_string()])?;
    }
    w.flush()?;
    log::info!(
        "{} components explain {:.4} of the variance",
        a.components,
        pca.cumulative_ratio(a.components)
    );
    write_run(&staging, "fit-pca", serde_json::to_value(a)?, inputs)?;
    staging.commit()
}

/// Training settings plus dataset and preprocessing choices. Serialized flat:
/// the training fields sit next to `data`, `pca_components` and
/// `quantile_normalize`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub pca_components: Option<usize>,
    pub quantile_normalize: bool,
    /// `None` means the loss is chosen from the dataset's label names.
    pub loss_kind: Option<LossKind>,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parses a run config; relative `data` paths are taken relative to `base`.
    pub fn from_json(text: &str, base: &Path) -> anyhow::Result<Self> {
        let mut map = match serde_json::from_str::<Value>(text)? {
            Value::Object(m) => m,
            _ => bail!("run config must be a JSON object"),
        };
        let data = match map.remove("data") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(base.join(s)),
            Some(v) => bail!("`data` must be a path string, got {v}"),
        };
        let pca_components = match map.remove("pca_components") {
            None | Some(Value::Null) => None,
            Some(v) => Some(serde_json::from_value(v).context("`pca_components` must be a non-negative integer")?),
        };
        let quantile_normalize = match map.remove("quantile_normalize") {
            None => false,
            Some(v) => serde_json::from_value(v).context("`quantile_normalize` must be a boolean")?,
        };
        let loss_kind = map
            .get("loss_kind")
            .map(|v| serde_json::from_value::<LossKind>(v.clone()))
            .transpose()
            .context("`loss_kind` must be \"va_ccc_mse\" or \"au_mse\"")?;
        let train: TrainConfig = serde_json::from_value(Value::Object(map)).context("invalid training settings")?;
        train.validate()?;
        Ok(RunConfig {
            data,
            pca_components,
            quantile_normalize,
            loss_kind,
            train,
        })
    }

    pub fn to_json(&self) -> Value {
        let mut v = serde_json::to_value(&self.train).expect("plain data serializes");
        let m = v.as_object_mut().expect("config is an object");
        m.insert("data".into(), json!(self.data));
        m.insert("pca_components".into(), json!(self.pca_components));
        m.insert("quantile_normalize".into(), json!(self.quantile_normalize));
        v
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            pca_components: None,
            quantile_normalize: false,
            loss_kind: None,
            train: TrainConfig::default(),
        }
    }
}

fn resolve_run_config(a: &TrainArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let base = path.parent().unwrap_or(Path::new(""));
            RunConfig::from_json(&text, base).with_context(|| format!("in config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr0 = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.train.weight_decay = v;
    }
    if let Some(v) = a.batch_sequences {
        cfg.train.batch_sequences = v;
    }
    if let Some(v) = a.seq_len {
        cfg.train.seq_len = v;
    }
    if let Some(v) = a.hidden {
        cfg.train.hidden = v;
    }
    if let Some(v) = a.loss {
        cfg.loss_kind = Some(v.into());
    }
    if let Some(v) = a.pca_components {
        cfg.pca_components = Some(v);
    }
    if a.quantile_normalize {
        cfg.quantile_normalize = true;
    }
    if cfg.pca_components == Some(0) {
        bail!("pca_components must be at least 1");
    }
    cfg.train.validate()?;
    Ok(cfg)
}

fn preprocess(dataset: &Dataset, split: Split, pre: &Preprocessing) -> anyhow::Result<Vec<SequencePair>> {
    dataset
        .split(split)
        .map(|s| {
            Ok(SequencePair {
                features: pre.apply(&s.frames)?,
                labels: s.labels.clone(),
            })
        })
        .collect()
}

fn default_loss(label_names: &[String]) -> LossKind {
    if label_names.iter().map(String::as_str).eq(VA_NAMES) {
        LossKind::VaCccMse
    } else {
        LossKind::AuMse
    }
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let mut cfg = resolve_run_config(a)?;
    let mut inputs = Inputs::default();
    if let Some(c) = &a.config {
        inputs.file(c)?;
    }
    let resumed = match &a.resume {
        Some(p) => {
            inputs.file(p)?;
            Some(Checkpoint::load(p)?)
        }
        None => None,
    };
    let data_path = cfg.data.clone().context("no dataset given; set `data` in the config or pass --data")?;
    inputs.dataset(&data_path)?;
    let dataset = load_dataset(&data_path)?;
    let loss = cfg.loss_kind.unwrap_or_else(|| default_loss(&dataset.label_names));
    cfg.train.loss_kind = loss;
    cfg.loss_kind = Some(loss);

    let (model, pre, start_epoch) = match &resumed {
        Some(ck) => {
            if ck.label_names != dataset.label_names || ck.feature_dim != dataset.feature_dim {
                bail!("checkpoint was trained on different features or labels than {}", data_path.display());
            }
            if ck.hidden != cfg.train.hidden {
                log::warn!("hidden size {} comes from the checkpoint", ck.hidden);
                cfg.train.hidden = ck.hidden;
            }
            (ck.model()?, ck.preprocessing.clone(), ck.epochs_completed)
        }
        None => {
            let train_frames = dataset.stacked_frames(Split::Train)?;
            let pre = Preprocessing::fit(&train_frames, cfg.quantile_normalize, cfg.pca_components)?;
            let model = BiGruRegressor::new(
                pre.output_dim(dataset.feature_dim),
                cfg.train.hidden,
                dataset.n_labels(),
                cfg.train.seed,
            )?
            .with_dropout(cfg.train.dropout_gru, cfg.train.dropout_head)?;
            (model, pre, 0)
        }
    };

    let staging = Staging::new(&a.out)?;
    let data = TrainData {
        train: preprocess(&dataset, Split::Train, &pre)?,
        val: preprocess(&dataset, Split::Val, &pre)?,
        label_names: dataset.label_names.clone(),
    };
    let opts = TrainOptions {
        exec: if a.sequential {
            crate::exec::Exec::Sequential
        } else {
            crate::exec::Exec::default()
        },
        start_epoch,
    };
    let outcome = train_with(&data, model, &cfg.train, &opts)?;
    let best_epoch = outcome
        .best_epoch
        .or(resumed.as_ref().and_then(|c| c.best_epoch));
    let checkpoint = Checkpoint::new(
        &outcome.best,
        &cfg.train,
        best_epoch,
        start_epoch + outcome.history.len(),
        &dataset.label_names,
        dataset.feature_dim,
        &pre,
    );
    checkpoint.save(&staging.path("checkpoint.json"))?;
    write_history_csv(&staging.path("history.csv"), &outcome.history)?;
    if let (Some(e), Some(r)) = (outcome.best_epoch, outcome.history.iter().find(|r| Some(r.epoch) == outcome.best_epoch)) {
        log::info!("best epoch {e}: validation score {:.4}", r.val_score);
    }
    let mut config = cfg.to_json();
    config["resume"] = json!(a.resume);
    write_run(&staging, "train", config, inputs)?;
    staging.commit()
}

#[derive(Serialize)]
struct EvalReport {
    aggregation: Aggregation,
    label_names: Vec<String>,
    splits: BTreeMap<&'static str, BTreeMap<String, f64>>,
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let mut inputs = Inputs::default();
    inputs.dataset(&a.data)?;
    let dataset = load_dataset(&a.data)?;
    let predicted: Vec<Matrix> = match (&a.checkpoint, &a.predictions) {
        (Some(ck_path), _) => {
            inputs.file(ck_path)?;
            let ck = Checkpoint::load(ck_path)?;
            if ck.label_names != dataset.label_names || ck.feature_dim != dataset.feature_dim {
                bail!("checkpoint does not match the features or labels of {}", a.data.display());
            }
            let model = ck.model()?;
            let inputs: Vec<Matrix> = dataset
                .sequences
                .iter()
                .map(|s| ck.preprocessing.apply(&s.frames))
                .collect::<crate::Result<_>>()?;
            let refs: Vec<&Matrix> = inputs.iter().collect();
            predict_sequences(&model, &refs, ck.config.seq_len, crate::exec::Exec::default())?
        }
        (None, Some(pred_path)) => {
            inputs.dataset(pred_path)?;
            let preds = load_dataset(pred_path)?;
            if preds.label_names != dataset.label_names {
                bail!("prediction labels {:?} differ from {:?}", preds.label_names, dataset.label_names);
            }
            dataset
                .sequences
                .iter()
                .map(|s| {
                    let p = preds
                        .sequences
                        .iter()
                        .find(|p| p.id == s.id)
                        .with_context(|| format!("no prediction for sequence {}", s.id))?;
                    if p.labels.shape() != s.labels.shape() {
                        bail!("prediction for {} has shape {:?}, expected {:?}", s.id, p.labels.shape(), s.labels.shape());
                    }
                    Ok(p.labels.clone())
                })
                .collect::<anyhow::Result<_>>()?
        }
        (None, None) => bail!("one of --checkpoint or --predictions is required"),
    };

    let aggregation = if a.per_sequence {
        Aggregation::PerSequence
    } else {
        Aggregation::Pooled
    };
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let idx: Vec<usize> = (0..dataset.sequences.len())
            .filter(|&i| dataset.sequences[i].split == split)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let targets: Vec<Matrix> = idx.iter().map(|&i| dataset.sequences[i].labels.clone()).collect();
        let preds: Vec<Matrix> = idx.iter().map(|&i| predicted[i].clone()).collect();
        let report = MetricsReport::compute(&dataset.label_names, &targets, &preds, aggregation)?;
        splits.insert(split.as_str(), report.to_flat());
    }
    let staging = Staging::new(&a.out)?;
    staging.write_json(
        "report.json",
        &EvalReport {
            aggregation,
            label_names: dataset.label_names.clone(),
            splits,
        },
    )?;
    write_run(&staging, "eval", serde_json::to_value(a)?, inputs)?;
    staging.commit()
}

fn prepared(x: &Matrix, standardize: bool) -> Matrix {
    if standardize {
        standardize_columns(x)
    } else {
        x.clone()
    }
}

fn cmd_analyze_corr(a: &AnalyzeCorrArgs) -> anyhow::Result<()> {
    let mut inputs = Inputs::default();
    let mut tables = serde_json::Map::new();
    let staging = Staging::new(&a.out)?;

    if let Some(manifest) = &a.data {
        inputs.dataset(manifest)?;
        let ds = load_dataset(manifest)?;
        let x = prepared(&stack_all(&ds, |s| &s.frames)?, a.standardize);
        let y = stack_all(&ds, |s| &s.labels)?;
        let fits = (0..y.cols())
            .map(|j| linreg_fit(&x, &y.column(j)))
            .collect::<crate::Result<Vec<_>>>()?;
        let table = CoefficientTable {
            feature_names: (0..ds.feature_dim).map(|i| format!("x{i}")).collect(),
            target_names: ds.label_names.clone(),
            fits,
        };
        warn_ill_conditioned(&table);
        table.write_csv(&staging.path("labels_on_features.csv"))?;
        tables.insert("labels_on_features".into(), table.to_json());
    }
    if let Some(path) = &a.classes {
        inputs.file(path)?;
        let samples = LabelledSamples::load_csv(path)?;
        let x = prepared(&samples.features, a.standardize);
        let n_classes = samples.n_classes();
        let fits = onevsrest_linreg(&x, &samples.labels, n_classes)?;
        let table = CoefficientTable {
            feature_names: samples.feature_names.clone(),
            target_names: (0..n_classes).map(|c| format!("class{c}")).collect(),
            fits,
        };
        warn_ill_conditioned(&table);
        table.write_csv(&staging.path("classes_on_features.csv"))?;
        tables.insert("classes_on_features".into(), table.to_json());
    }
    staging.write_json("correspondence.json", &Value::Object(tables))?;
    write_run(&staging, "analyze-corr", serde_json::to_value(a)?, inputs)?;
    staging.commit()
}

fn warn_ill_conditioned(table: &CoefficientTable) {
    for (name, fit) in table.target_names.iter().zip(&table.fits) {
        if fit.ill_conditioned {
            log::warn!("regression for {name} is ill-conditioned (condition {:.3e})", fit.condition);
        }
    }
}

fn stack_all(ds: &Dataset, pick: impl Fn(&dataio::SequenceRecord) -> &Matrix) -> anyhow::Result<Matrix> {
    let parts: Vec<Matrix> = ds.sequences.iter().map(|s| pick(s).clone()).collect();
    if parts.is_empty() {
        bail!("dataset has no sequences");
    }
    Ok(Matrix::vstack(&parts)?)
}

#[derive(Serialize)]
struct KnnReport {
    k: usize,
    quantile_normalize: bool,
    n_samples: usize,
    n_classes: usize,
    accuracy: f64,
    confusion: Vec<Vec<u64>>,
    predictions: Vec<usize>,
}

fn cmd_knn_eval(a: &KnnEvalArgs) -> anyhow::Result<()> {
    let mut inputs = Inputs::default();
    inputs.file(&a.samples)?;
    let samples = LabelledSamples::load_csv(&a.samples)?;
    let features = if a.quantile_normalize {
        fit_quantile_scaler(&samples.features, 0.25, 0.75)?.apply_matrix(&samples.features)?
    } else {
        samples.features.clone()
    };
    let result = knn_loocv(&features, &samples.labels, KnnConfig { k: a.k })?;
    let staging = Staging::new(&a.out)?;
    staging.write_json(
        "knn.json",
        &KnnReport {
            k: a.k,
            quantile_normalize: a.quantile_normalize,
            n_samples: samples.labels.len(),
            n_classes: result.confusion.len(),
            accuracy: result.accuracy,
            confusion: result.confusion,
            predictions: result.predictions,
        },
    )?;
    write_run(&staging, "knn-eval", serde_json::to_value(a)?, inputs)?;
    staging.commit()
}

#[derive(Serialize, Deserialize)]
struct FitOutput {
    pose: PoseParams,
    alpha_id: Vec<f64>,
    alpha_ex: Vec<f64>,
    residual: f64,
    residual_history: Vec<f64>,
}

fn cmd_fit_3dmm(a: &Fit3dmmArgs) -> anyhow::Result<()> {
    let mut inputs = Inputs::default();
    inputs.file(&a.model)?;
    inputs.file(&a.landmarks)?;
    let model = MorphableModel::load_json(&a.model)?;
    let observed = load_landmarks_csv(&a.landmarks)?;
    if observed.len() != 2 * model.n_vertices() {
        bail!(
            "{} has {} landmarks but the model has {} vertices",
            a.landmarks.display(),
            observed.len() / 2,
            model.n_vertices()
        );
    }
    let fit = match &a.pose {
        Some(p) => {
            inputs.file(p)?;
            let pose: PoseParams = dataio::read_json(p)?;
            pose.validate()?;
            let c = model.fit_coefficients(&observed, &pose)?;
            let fitted = project(&pose, &model.synthesize_shape(&c)?)?;
            let residual = fitted
                .iter()
                .zip(&observed)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            FitOutput {
                pose,
                alpha_id: c.alpha_id,
                alpha_ex: c.alpha_ex,
                residual,
                residual_history: vec![residual],
            }
        }
        None => {
            let f = model.fit_pose_and_coefficients(&observed, a.iters)?;
            FitOutput {
                pose: f.pose,
                alpha_id: f.coefficients.alpha_id,
                alpha_ex: f.coefficients.alpha_ex,
                residual: f.residual,
                residual_history: f.residual_history,
            }
        }
    };
    let staging = Staging::new(&a.out)?;
    staging.write_json("fit.json", &fit)?;
    write_run(&staging, "fit-3dmm", serde_json::to_value(a)?, inputs)?;
    staging.commit()
}
