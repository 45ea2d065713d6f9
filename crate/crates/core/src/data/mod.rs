//! Hyperspectral cubes and the preprocessing pipeline that turns them into
//! labeled training patches.

mod cube;
mod patches;
mod pca;
mod split;
mod synth;

pub use cube::{load_cube, save_cube, HsiCube, CUBE_MAGIC, LABEL_MAGIC};
pub use patches::{center_offset, extract_patches, patch_at, Padding, PatchSample};
pub use pca::{apply_pca, fit_pca, jacobi_eigen, PcaModel};
pub use split::{apportion, split_indices, stratified_split, Split, SplitIndices, SplitSpec};
pub use synth::{class_signature, strip_class, synth_cube, SynthSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("header declares {declared} values but payload holds {found}")]
    HeaderMismatch { declared: usize, found: usize },
    #[error("invalid header: {0}")]
    BadHeader(String),
    #[error("label {label} exceeds class count {classes}")]
    LabelOutOfRange { label: u16, classes: usize },
    #[error("band mismatch: expected {expected} bands, found {found}")]
    BandMismatch { expected: usize, found: usize },
    #[error("class {class} has only {count} samples (need at least 3)")]
    ClassTooSmall { class: u16, count: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
