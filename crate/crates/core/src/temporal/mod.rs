//! The sequence regressor and its training stack.

mod checkpoint;
mod gru;
mod loss;
mod model;
mod optim;
mod train;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT};
pub use gru::{gru_cell_forward, BiGruLayer, GruDirection};
pub use loss::{loss_au, loss_au_grad, loss_va, loss_va_grad, LossKind};
pub use model::{BiGruRegressor, ForwardCache, DEFAULT_DROPOUT_GRU, DEFAULT_DROPOUT_HEAD, DEFAULT_HIDDEN};
pub use optim::{cosine_lr, cosine_warm_restart_lr, AdamConfig, AdamState, CosineWarmRestarts};
pub use train::{
    batch_gradient, predict_sequences, train, train_with, write_history_csv, EpochRecord, SchedulerConfig,
    SequencePair, TrainConfig, TrainData, TrainOptions, TrainOutcome,
};
