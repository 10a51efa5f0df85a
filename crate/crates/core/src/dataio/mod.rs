//! Datasets on disk, windowing, and seeded synthetic generators.
//!
//! A dataset is a JSON manifest next to one CSV per sequence. Each CSV has the
//! header `t,x0,..,x{D-1},<label names>` and one row per frame with strictly
//! increasing integer `t`.

mod synth;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

pub use synth::{
    au_names, random_mapping, random_offsets, split_for, synth_au_dataset, synth_va_dataset, GroundTruth,
    SynthOptions, SynthOutput, Task, AU_MAX_INTENSITY, AU_NAMES, VA_NAMES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One video: per-frame features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub id: String,
    /// T×D
    pub frames: Matrix,
    /// T×L
    pub labels: Matrix,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub label_names: Vec<String>,
    pub sequences: Vec<SequenceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub feature_dim: usize,
    pub label_names: Vec<String>,
    pub sequences: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SequenceRecord> {
        self.sequences.iter().filter(move |s| s.split == split)
    }

    pub fn n_labels(&self) -> usize {
        self.label_names.len()
    }

    /// All frames of one split stacked into a single matrix.
    pub fn stacked_frames(&self, split: Split) -> Result<Matrix> {
        let parts: Vec<Matrix> = self.split(split).map(|s| s.frames.clone()).collect();
        if parts.is_empty() {
            return Ok(Matrix::zeros(0, self.feature_dim));
        }
        Matrix::vstack(&parts)
    }

    pub fn stacked_labels(&self, split: Split) -> Result<Matrix> {
        let parts: Vec<Matrix> = self.split(split).map(|s| s.labels.clone()).collect();
        if parts.is_empty() {
            return Ok(Matrix::zeros(0, self.n_labels()));
        }
        Matrix::vstack(&parts)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.sequences {
            let bad = |m: String| Err(Error::InvalidArgument(format!("sequence {}: {m}", s.id)));
            if s.frames.rows() == 0 {
                return bad("no frames".into());
            }
            if s.frames.cols() != self.feature_dim || s.labels.cols() != self.n_labels() {
                return bad(format!(
                    "features {:?} / labels {:?} do not match D={} L={}",
                    s.frames.shape(),
                    s.labels.shape(),
                    self.feature_dim,
                    self.n_labels()
                ));
            }
            if s.labels.rows() != s.frames.rows() {
                return bad("frame and label counts differ".into());
            }
            if !s.frames.is_finite() || !s.labels.is_finite() {
                return bad("non-finite values".into());
            }
        }
        Ok(())
    }
}

fn csv_header(feature_dim: usize, label_names: &[String]) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((0..feature_dim).map(|i| format!("x{i}")))
        .chain(label_names.iter().cloned())
        .collect()
}

/// Decimal text with 17 significant digits; parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes one CSV per sequence plus `manifest.json` into `dir` and returns the
/// manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    dataset.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = csv_header(dataset.feature_dim, &dataset.label_names);
    let mut entries = Vec::with_capacity(dataset.sequences.len());
    for s in &dataset.sequences {
        let file = PathBuf::from(format!("{}.csv", s.id));
        let path = dir.join(&file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        w.write_record(&header).map_err(|e| csv_error(&path, e))?;
        for t in 0..s.frames.rows() {
            let record = std::iter::once(t.to_string())
                .chain(s.frames.row(t).iter().map(|v| format_f64(*v)))
                .chain(s.labels.row(t).iter().map(|v| format_f64(*v)));
            w.write_record(record).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            path: file,
            split: s.split,
        });
    }
    let manifest = DatasetManifest {
        feature_dim: dataset.feature_dim,
        label_names: dataset.label_names.clone(),
        sequences: entries,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.into(),
        line,
        message: e.to_string(),
    }
}

fn parse_float(path: &Path, line: usize, column: &str, text: &str) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
        path: path.into(),
        line,
        message: format!("column {column}: cannot parse {text:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.into(),
            line,
            message: format!("column {column}: non-finite value {text:?}"),
        });
    }
    Ok(v)
}

/// Reads a manifest and every sequence it references.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let header = csv_header(manifest.feature_dim, &manifest.label_names);
    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for entry in &manifest.sequences {
        let path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        let (frames, labels) = read_sequence_csv(&path, &header, manifest.feature_dim)?;
        sequences.push(SequenceRecord {
            id: entry.id.clone(),
            frames,
            labels,
            split: entry.split,
        });
    }
    Ok(Dataset {
        feature_dim: manifest.feature_dim,
        label_names: manifest.label_names,
        sequences,
    })
}

fn read_sequence_csv(path: &Path, header: &[String], feature_dim: usize) -> Result<(Matrix, Matrix)> {
    if !path.exists() {
        return Err(Error::Data {
            path: path.into(),
            message: "referenced sequence file does not exist".into(),
        });
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let got: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if got != header {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("header {:?} does not match expected {:?}", got.join(","), header.join(",")),
        });
    }
    let n_labels = header.len() - 1 - feature_dim;
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    let mut last_t: Option<i64> = None;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let t: i64 = record[0].trim().parse().map_err(|_| Error::Parse {
            path: path.into(),
            line,
            message: format!("t must be an integer, got {:?}", &record[0]),
        })?;
        if let Some(prev) = last_t {
            if t <= prev {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    message: format!("t must be strictly increasing ({t} after {prev})"),
                });
            }
        }
        last_t = Some(t);
        for (j, text) in record.iter().enumerate().skip(1) {
            let v = parse_float(path, line, &header[j], text)?;
            if j <= feature_dim {
                frames.push(v);
            } else {
                labels.push(v);
            }
        }
    }
    let t_len = frames.len() / feature_dim.max(1);
    if t_len == 0 {
        return Err(Error::Data {
            path: path.into(),
            message: "sequence has no frames".into(),
        });
    }
    Ok((
        Matrix::from_vec(t_len, feature_dim, frames)?,
        Matrix::from_vec(t_len, n_labels, labels)?,
    ))
}

/// A contiguous run of frames inside one sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub sequence_id: String,
    pub sequence_index: usize,
    pub start: usize,
    pub len: usize,
}

pub const DEFAULT_WINDOW_LEN: usize = 100;
pub const MIN_WINDOW_LEN: usize = 2;

/// `(start, len)` spans of windows over a sequence of `t_len` frames. Full
/// windows start every `stride` frames; a shorter trailing window is kept only
/// if it has at least two frames.
pub fn window_spans(t_len: usize, window_len: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if window_len < MIN_WINDOW_LEN || stride == 0 {
        return out;
    }
    let mut start = 0;
    while start < t_len {
        let len = window_len.min(t_len - start);
        if len == window_len {
            out.push((start, len));
        } else {
            if len >= MIN_WINDOW_LEN {
                out.push((start, len));
            }
            break;
        }
        start += stride;
    }
    out
}

/// Windows over every sequence in `split` (all splits when `None`), in
/// manifest order.
pub fn make_windows(dataset: &Dataset, split: Option<Split>, window_len: usize, stride: usize) -> Result<Vec<Window>> {
    if window_len < MIN_WINDOW_LEN {
        return Err(Error::InvalidArgument(format!(
            "window length must be at least {MIN_WINDOW_LEN}, got {window_len}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("window stride must be positive".into()));
    }
    Ok(dataset
        .sequences
        .iter()
        .enumerate()
        .filter(|(_, s)| split.is_none_or(|sp| s.split == sp))
        .flat_map(|(i, s)| {
            window_spans(s.frames.rows(), window_len, stride)
                .into_iter()
                .map(move |(start, len)| Window {
                    sequence_id: s.id.clone(),
                    sequence_index: i,
                    start,
                    len,
                })
        })
        .collect())
}

/// Class-labelled feature vectors, e.g. AU intensities with emotion classes.
/// CSV header: `<feature names...>,label`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSamples {
    pub feature_names: Vec<String>,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl LabelledSamples {
    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = self.feature_names.iter().cloned().chain(std::iter::once("label".into()));
        w.write_record(header.collect::<Vec<String>>()).map_err(|e| csv_error(path, e))?;
        for (row, label) in self.features.row_iter().zip(&self.labels) {
            let rec = row.iter().map(|v| format_f64(*v)).chain(std::iter::once(label.to_string()));
            w.write_record(rec.collect::<Vec<_>>()).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if header.len() < 2 || header.last().map(String::as_str) != Some("label") {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                message: "expected header `<features...>,label`".into(),
            });
        }
        let d = header.len() - 1;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            for j in 0..d {
                values.push(parse_float(path, line, &header[j], &record[j])?);
            }
            let label = record[d].trim().parse::<usize>().map_err(|_| Error::Parse {
                path: path.into(),
                line,
                message: format!("label must be a non-negative integer, got {:?}", &record[d]),
            })?;
            labels.push(label);
        }
        Ok(LabelledSamples {
            feature_names: header[..d].to_vec(),
            features: Matrix::from_vec(labels.len(), d, values)?,
            labels,
        })
    }
}

/// 2D landmarks as `x,y` rows, flattened to `[x0, y0, x1, y1, ...]`.
pub fn load_landmarks_csv(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header != ["x", "y"] {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("expected header `x,y`, got {:?}", header.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        out.push(parse_float(path, line, "x", &record[0])?);
        out.push(parse_float(path, line, "y", &record[1])?);
    }
    Ok(out)
}

pub fn save_landmarks_csv(path: &Path, points: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["x", "y"]).map_err(|e| csv_error(path, e))?;
    for p in points.chunks_exact(2) {
        w.write_record([format_f64(p[0]), format_f64(p[1])])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Headered numeric CSV where every column is a feature.
pub fn load_matrix_csv(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().any(String::is_empty) {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: "expected a header naming every column".into(),
        });
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for (name, field) in header.iter().zip(record.iter()) {
            values.push(parse_float(path, line, name, field)?);
        }
        rows += 1;
    }
    let cols = header.len();
    Ok((header, Matrix::from_vec(rows, cols, values)?))
}

pub fn save_matrix_csv(path: &Path, names: &[String], m: &Matrix) -> Result<()> {
    if names.len() != m.cols() {
        return Err(Error::Dimension(format!("{} names for {} columns", names.len(), m.cols())));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(names).map_err(|e| csv_error(path, e))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format_f64(*v)))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset {
            feature_dim: 2,
            label_names: vec!["valence".into(), "arousal".into()],
            sequences: vec![SequenceRecord {
                id: "s0".into(),
                frames: Matrix::from_rows(&[[0.1, 0.2], [1.0 / 3.0, -4.0], [5e-300, 7.25]]).unwrap(),
                labels: Matrix::from_rows(&[[0.5, -0.5], [0.25, 0.0], [-1.0, 1.0]]).unwrap(),
                split: Split::Train,
            }],
        }
    }

    #[test]
    fn save_then_load_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        let manifest = save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(&manifest).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.sequences[0].frames.shape(), (3, 2));
        assert_eq!(back.sequences[0].labels.shape(), (3, 2));
    }

    #[test]
    fn header_mismatch_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&tiny(), dir.path()).unwrap();
        std::fs::write(dir.path().join("s0.csv"), "t,x0,valence\n0,1,2\n").unwrap();
        let err = load_dataset(&manifest).unwrap_err().to_string();
        assert!(err.contains("s0.csv"), "{err}");
    }

    #[test]
    fn duplicate_time_and_nan_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&tiny(), dir.path()).unwrap();
        let file = dir.path().join("s0.csv");
        std::fs::write(&file, "t,x0,x1,valence,arousal\n0,1,2,3,4\n0,1,2,3,4\n").unwrap();
        let err = load_dataset(&manifest).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        std::fs::write(&file, "t,x0,x1,valence,arousal\n0,1,2,3,4\n1,NaN,2,3,4\n").unwrap();
        assert!(matches!(load_dataset(&manifest), Err(Error::Parse { line: 3, .. })));
        std::fs::remove_file(&file).unwrap();
        assert!(matches!(load_dataset(&manifest), Err(Error::Data { .. })));
    }

    #[test]
    fn window_rules() {
        let lens = |t| window_spans(t, 100, 100).iter().map(|w| w.1).collect::<Vec<_>>();
        assert_eq!(lens(250), vec![100, 100, 50]);
        assert_eq!(lens(1), Vec::<usize>::new());
        assert_eq!(lens(100), vec![100]);
        assert_eq!(lens(201), vec![100, 100]);
        assert_eq!(lens(202), vec![100, 100, 2]);
    }

    #[test]
    fn samples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = LabelledSamples {
            feature_names: vec!["AU06".into(), "AU12".into()],
            features: Matrix::from_rows(&[[0.5, 1.0], [2.0, 0.0]]).unwrap(),
            labels: vec![1, 0],
        };
        s.save_csv(&path).unwrap();
        assert_eq!(LabelledSamples::load_csv(&path).unwrap(), s);
    }
}
