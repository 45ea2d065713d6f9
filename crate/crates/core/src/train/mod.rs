//! Loss, optimizer, training loop and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod loss;
mod trainer;

pub use adam::OptimState;
pub use checkpoint::{Checkpoint, CKPT_MAGIC};
pub use config::TrainConfig;
pub use loss::{cross_entropy_loss, l2_targets};
pub use trainer::{history_csv, EpochRecord, TrainOutcome, Trainer};

use thiserror::Error;

use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("label {label} outside 1..={n_classes}")]
    Label { label: u16, n_classes: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error("optimizer state does not match parameters: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
