//! Dense tensors with reverse-mode gradients.

mod array;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod rng;

pub use array::Tensor;
pub use gradcheck::{finite_diff_grad, grad_error, GradError};
pub use graph::{sigmoid, Graph, Var, DIFFERENTIABLE_OPS};
pub use rng::Rng64;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    Config(String),
}
