//! The DiffFormer network.

mod config;
pub mod layers;
mod network;
mod params;
mod posenc;

pub use config::{AttentionKind, ModelConfig};
pub use layers::{AttentionTrace, LayerVars};
pub use network::{argmax, DiffFormer, ForwardPass};
pub use params::{is_weight_matrix, parameter_layout, BoundParams, ParamStore, HEAD_WEIGHTS};
pub use posenc::positional_encoding;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("attention needs at least 2 tokens, got {0}")]
    TooFewTokens(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
