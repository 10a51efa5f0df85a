//! Single-file JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::BiGruRegressor;
use super::train::TrainConfig;
use crate::dataio::{read_json, write_json};
use crate::features::Preprocessing;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "affectlab-bigru-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major values.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    /// Global epochs trained so far, including any resumed runs.
    pub epochs_completed: usize,
    pub label_names: Vec<String>,
    /// Raw per-frame feature width before preprocessing.
    pub feature_dim: usize,
    pub preprocessing: Preprocessing,
    pub input_dim: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub dropout_gru: f64,
    pub dropout_head: f64,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &BiGruRegressor,
        config: &TrainConfig,
        best_epoch: Option<usize>,
        epochs_completed: usize,
        label_names: &[String],
        feature_dim: usize,
        preprocessing: &Preprocessing,
    ) -> Self {
        let params = model
            .tensor_names()
            .into_iter()
            .zip(model.tensor_shapes())
            .zip(model.tensors())
            .map(|((name, shape), data)| NamedTensor {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: config.clone(),
            seed: config.seed,
            best_epoch,
            epochs_completed,
            label_names: label_names.to_vec(),
            feature_dim,
            preprocessing: preprocessing.clone(),
            input_dim: model.input_dim(),
            hidden: model.hidden(),
            outputs: model.outputs(),
            dropout_gru: model.dropout_gru,
            dropout_head: model.dropout_head,
            params,
        }
    }

    pub fn model(&self) -> Result<BiGruRegressor> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        let mut model = BiGruRegressor::new(self.input_dim, self.hidden, self.outputs, 0)?
            .with_dropout(self.dropout_gru, self.dropout_head)?;
        let names = model.tensor_names();
        let shapes = model.tensor_shapes();
        if self.params.len() != names.len() {
            return Err(Error::Dimension(format!(
                "checkpoint has {} tensors, model needs {}",
                self.params.len(),
                names.len()
            )));
        }
        for (((dst, name), shape), src) in model.tensors_mut().into_iter().zip(&names).zip(&shapes).zip(&self.params) {
            if &src.name != name || &src.shape != shape || src.data.len() != dst.len() {
                return Err(Error::Dimension(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    src.name, src.shape
                )));
            }
            dst.copy_from_slice(&src.data);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_restores_parameters_exactly() {
        let model = BiGruRegressor::new(3, 4, 2, 11).unwrap();
        let cfg = TrainConfig::default();
        let ck = Checkpoint::new(&model, &cfg, Some(3), 4, &["a".into(), "b".into()], 3, &Preprocessing::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model().unwrap(), model);
    }
}
