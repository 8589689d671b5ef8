//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every op eagerly computes its value and, when recording is on and an input
//! requires a gradient, links itself into a graph. [`Tensor::backward`] walks
//! that graph in reverse topological order. Parameters live in a
//! [`ParamStore`], which also carries AdamW state and the checkpoint codec.

mod checkpoint;
mod gradcheck;
pub mod nn;
mod ops;
mod store;
mod tensor;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointEntry, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use checkpoint::write_atomic;
pub use gradcheck::{grad_check, grad_check_store};
pub use ops::{bce_with_logits, concat, cross_entropy, gaussian_kl_to_std_normal, mse, mse_masked};
pub use store::{AdamWConfig, ParamStore};
pub use tensor::{grad_enabled, no_grad, NoGradGuard, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward called on a tensor without a recorded graph")]
    Detached,
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("grad check: {0}")]
    GradCheck(String),
}

#[cfg(test)]
mod tests;
