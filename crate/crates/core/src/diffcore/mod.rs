//! Minimal reverse-mode differentiation: tensors, a define-by-run tape,
//! a named parameter registry, initialisers and the checkpoint container.
//!
//! Everything runs in `f64`; the tape is rebuilt for every document.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod init;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError, Section};
pub use graph::{log_sum_exp, softmax, Gradients, Graph, NodeId, Op};
pub use init::{dropout_mask, init_glorot, init_normal, init_orthonormal};
pub use params::{ParamGrads, ParamId, ParameterRegistry};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in `{op}`: {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("`{op}` produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("parameter `{0}` is already registered")]
    DuplicateParameter(String),
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidDropoutRate(f64),
}
