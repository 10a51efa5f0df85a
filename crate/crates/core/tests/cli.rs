mod common;

use std::path::Path;
use std::process::Command;

use affectlab::dataio::{load_dataset, make_windows, save_landmarks_csv, save_matrix_csv, LabelledSamples, Split};
use affectlab::face3dmm::{project, MorphableModel, PoseParams, ShapeCoefficients};
use affectlab::features::PcaModel;
use affectlab::linalg::Matrix;
use affectlab::temporal::{BiGruRegressor, Checkpoint};
use common::{cli, read_json};

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_affectlab"));
    c.env_remove("AFFECTLAB_LOG");
    c
}

fn small_va(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("va");
    cli(&["synth", "--task", "va", "--seed", "2", "--sequences", "5", "--frames", "60", "--out", p(&out)]).unwrap();
    out.join("manifest.json")
}

#[test]
fn synth_writes_manifest_and_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    cli(&["synth", "--task", "au", "--sequences", "7", "--frames", "30", "--out", p(&out)]).unwrap();
    let csvs = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 7);
    let ds = load_dataset(&out.join("manifest.json")).unwrap();
    assert_eq!(ds.label_names, ["AU06", "AU10", "AU12", "AU14", "AU17"]);
    assert!(out.join("run.json").exists() && out.join("model.json").exists());
}

#[test]
fn single_frame_sequences_warn_about_windows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = bin()
        .args(["synth", "--task", "va", "--frames", "1", "--out", p(&out)])
        .output()
        .unwrap();
    assert!(o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("no trainable windows"), "{stderr}");
    let ds = load_dataset(&out.join("manifest.json")).unwrap();
    assert!(make_windows(&ds, Some(Split::Train), 100, 100).unwrap().is_empty());
}

#[test]
fn fit_pca_reports_rank_and_reloads_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(1);
    let latent = common::random_matrix(&mut r, 200, 3);
    let mix = common::random_matrix(&mut r, 3, 8);
    let x = latent.matmul(&mix).unwrap();
    let names: Vec<String> = (0..8).map(|i| format!("a{i}")).collect();
    let csv = dir.path().join("x.csv");
    save_matrix_csv(&csv, &names, &x).unwrap();
    let out = dir.path().join("pca");
    cli(&["fit-pca", "--features", p(&csv), "--components", "3", "--out", p(&out)]).unwrap();

    let text = std::fs::read_to_string(out.join("variance.csv")).unwrap();
    let row3: Vec<&str> = text.lines().nth(3).unwrap().split(',').collect();
    assert_eq!(row3[0], "3");
    assert!(row3[2].parse::<f64>().unwrap() >= 0.99);

    let bytes = std::fs::read_to_string(out.join("pca.json")).unwrap();
    let model: PcaModel = serde_json::from_str(&bytes).unwrap();
    assert_eq!(serde_json::to_string_pretty(&model).unwrap() + "\n", bytes);

    let zero = dir.path().join("zero");
    let o = bin()
        .args(["fit-pca", "--features", p(&csv), "--components", "0", "--out", p(&zero)])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(!zero.exists());
}

#[test]
fn zero_epochs_emit_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_va(dir.path());
    let out = dir.path().join("t");
    cli(&["train", "--data", p(&manifest), "--epochs", "0", "--hidden", "6", "--seed", "4", "--out", p(&out)]).unwrap();
    let ck = Checkpoint::load(&out.join("checkpoint.json")).unwrap();
    let init = BiGruRegressor::new(10, 6, 2, 4).unwrap();
    assert_eq!(ck.model().unwrap(), init);
    assert_eq!(ck.best_epoch, None);
    assert_eq!(std::fs::read_to_string(out.join("history.csv")).unwrap().lines().count(), 1);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_va(dir.path());
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"data": "va/manifest.json", "epochs": 3, "hidden": 6, "seq_len": 20, "quantile_normalize": true, "pca_components": 4}"#,
    )
    .unwrap();
    let out = dir.path().join("t");
    cli(&["train", "--config", p(&cfg), "--epochs", "2", "--out", p(&out)]).unwrap();
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let run = read_json(&out.join("run.json"));
    assert_eq!(run["config"]["epochs"], 2);
    assert_eq!(run["config"]["pca_components"], 4);
    assert_eq!(run["config"]["loss_kind"], "va_ccc_mse");
    let ck = Checkpoint::load(&out.join("checkpoint.json")).unwrap();
    assert_eq!(ck.input_dim, 4);

    let resumed = dir.path().join("r");
    cli(&["train", "--data", p(&manifest), "--resume", p(&out.join("checkpoint.json")), "--epochs", "1", "--hidden", "6", "--out", p(&resumed)])
        .unwrap();
    let h = std::fs::read_to_string(resumed.join("history.csv")).unwrap();
    assert!(h.lines().nth(1).unwrap().starts_with("2,"));

    std::fs::write(&cfg, r#"{"data": "va/manifest.json", "epoch": 3}"#).unwrap();
    let bad = dir.path().join("bad");
    assert!(cli(&["train", "--config", p(&cfg), "--out", p(&bad)]).is_err());
    assert!(!bad.exists());
}

#[test]
fn eval_of_labels_against_themselves() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_va(dir.path());
    let out = dir.path().join("e");
    cli(&["eval", "--data", p(&manifest), "--predictions", p(&manifest), "--out", p(&out)]).unwrap();
    let report = read_json(&out.join("report.json"));
    for split in ["train", "val", "test"] {
        let s = report["splits"][split].as_object().unwrap();
        assert_eq!(s["valence.ccc"], 1.0);
        assert_eq!(s["arousal.ccc"], 1.0);
        assert_eq!(s.len(), 12);
    }
}

#[test]
fn eval_per_sequence_averages_sequence_scores() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_va(dir.path());
    let ck_dir = dir.path().join("t");
    cli(&["train", "--data", p(&manifest), "--epochs", "1", "--hidden", "4", "--out", p(&ck_dir)]).unwrap();
    let ck = p(&ck_dir.join("checkpoint.json")).to_string();
    let pooled = dir.path().join("pooled");
    let per = dir.path().join("per");
    cli(&["eval", "--data", p(&manifest), "--checkpoint", &ck, "--out", p(&pooled)]).unwrap();
    cli(&["eval", "--data", p(&manifest), "--checkpoint", &ck, "--per-sequence", "--out", p(&per)]).unwrap();

    let ds = load_dataset(&manifest).unwrap();
    let model = Checkpoint::load(Path::new(&ck)).unwrap().model().unwrap();
    let train: Vec<_> = ds.split(Split::Train).collect();
    let mut per_seq = Vec::new();
    let (mut all_t, mut all_p) = (Vec::new(), Vec::new());
    for s in &train {
        let mut pred = Vec::new();
        for start in (0..s.frames.rows()).step_by(100) {
            let end = (start + 100).min(s.frames.rows());
            pred.extend(model.predict(&s.frames.slice_rows(start, end)).unwrap().column(0));
        }
        let t = s.labels.column(0);
        per_seq.push(common::ccc(&t, &pred));
        all_t.extend(t);
        all_p.extend(pred);
    }
    let want_per = per_seq.iter().sum::<f64>() / per_seq.len() as f64;
    let got_per = read_json(&per.join("report.json"))["splits"]["train"]["valence.ccc"].as_f64().unwrap();
    let got_pooled = read_json(&pooled.join("report.json"))["splits"]["train"]["valence.ccc"].as_f64().unwrap();
    assert!((got_per - want_per).abs() < 1e-10);
    assert!((got_pooled - common::ccc(&all_t, &all_p)).abs() < 1e-10);
}

#[test]
fn analyze_corr_flags_constant_columns() {
    let dir = tempfile::tempdir().unwrap();
    let samples = LabelledSamples {
        feature_names: vec!["AU06".into(), "AU12".into(), "AU17".into()],
        features: Matrix::from_fn(12, 3, |i, j| if j == 1 { 2.0 } else { ((i * (j + 3)) % 7) as f64 }),
        labels: (0..12).map(|i| i % 3).collect(),
    };
    let csv = dir.path().join("s.csv");
    samples.save_csv(&csv).unwrap();
    let out = dir.path().join("c");
    cli(&["analyze-corr", "--classes", p(&csv), "--out", p(&out)]).unwrap();
    let report = read_json(&out.join("correspondence.json"));
    assert_eq!(report["classes_on_features"]["class0"]["ill_conditioned"], true);
    let table = std::fs::read_to_string(out.join("classes_on_features.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 + 1);
}

#[test]
fn knn_eval_single_class_and_bad_k() {
    let dir = tempfile::tempdir().unwrap();
    let samples = LabelledSamples {
        feature_names: vec!["a".into()],
        features: Matrix::from_fn(6, 1, |i, _| i as f64),
        labels: vec![0; 6],
    };
    let csv = dir.path().join("s.csv");
    samples.save_csv(&csv).unwrap();
    let out = dir.path().join("k");
    cli(&["knn-eval", "--samples", p(&csv), "--out", p(&out)]).unwrap();
    assert_eq!(read_json(&out.join("knn.json"))["accuracy"], 1.0);
    let o = bin()
        .args(["knn-eval", "--samples", p(&csv), "--k", "6", "--out", p(&dir.path().join("k6"))])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(!dir.path().join("k6").exists());
}

fn fixture(dir: &Path) -> (std::path::PathBuf, MorphableModel, ShapeCoefficients, PoseParams) {
    let data = dir.join("d");
    cli(&["synth", "--task", "va", "--sequences", "1", "--frames", "2", "--out", p(&data)]).unwrap();
    let model_path = data.join("model.json");
    let model = MorphableModel::load_json(&model_path).unwrap();
    let c = ShapeCoefficients {
        alpha_id: (0..model.k_id()).map(|i| 0.3 * (i as f64).sin()).collect(),
        alpha_ex: (0..model.k_ex()).map(|i| 0.5 * (i as f64).cos()).collect(),
    };
    let pose = PoseParams::new(1.3, PoseParams::axis_angle([0.2, 1.0, 0.1], 0.4), [0.5, -0.2]).unwrap();
    (model_path, model, c, pose)
}

#[test]
fn fit_3dmm_recovers_pose_and_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let (model_path, model, c, pose) = fixture(dir.path());
    let lm = dir.path().join("lm.csv");
    save_landmarks_csv(&lm, &project(&pose, &model.synthesize_shape(&c).unwrap()).unwrap()).unwrap();

    let out = dir.path().join("f");
    cli(&["fit-3dmm", "--model", p(&model_path), "--landmarks", p(&lm), "--out", p(&out)]).unwrap();
    let fit = read_json(&out.join("fit.json"));
    for (k, want) in c.alpha_ex.iter().enumerate() {
        assert!((fit["alpha_ex"][k].as_f64().unwrap() - want).abs() < 1e-4);
    }
    assert!((fit["pose"]["scale"].as_f64().unwrap() - 1.3).abs() < 1e-4);

    let pose_path = dir.path().join("pose.json");
    std::fs::write(&pose_path, serde_json::to_string(&pose).unwrap()).unwrap();
    let known = dir.path().join("k");
    cli(&["fit-3dmm", "--model", p(&model_path), "--landmarks", p(&lm), "--pose", p(&pose_path), "--out", p(&known)])
        .unwrap();
    let fit = read_json(&known.join("fit.json"));
    for (k, want) in c.alpha_id.iter().enumerate() {
        assert!((fit["alpha_id"][k].as_f64().unwrap() - want).abs() < 1e-8);
    }
}

#[test]
fn fit_3dmm_reports_malformed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (model_path, ..) = fixture(dir.path());
    let lm = dir.path().join("bad.csv");
    std::fs::write(&lm, "x,y\n0.5,0.25\n0.1,oops\n").unwrap();
    let out = dir.path().join("f");
    let o = bin()
        .args(["fit-3dmm", "--model", p(&model_path), "--landmarks", p(&lm), "--out", p(&out)])
        .output()
        .unwrap();
    assert!(!o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("bad.csv:3:") && stderr.contains("oops"), "{stderr}");
    assert!(!out.exists());
}
