//! DiffFormer: a spectral-spatial transformer with differential multi-head
//! self-attention for hyperspectral pixel classification.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] - dense arrays, a reverse-mode tape and finite-difference checks
//! * [`data`] - cube I/O, PCA band reduction, patch extraction, splitting, synthesis
//! * [`model`] - tokenizer, positional encoding, attention, SWiGLU blocks, head
//! * [`train`] - loss, Adam with inverse-time decay, training loop, checkpoints
//! * [`metrics`] - confusion matrix, OA / AA / kappa
//! * [`selftest`] - numeric self-checks exposed by the command line tool

pub mod data;
pub mod metrics;
pub mod model;
pub mod selftest;
pub mod tensor;
pub mod train;
