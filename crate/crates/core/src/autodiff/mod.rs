//! Minimal reverse-mode differentiation, MLP heads, Adam, and checkpoints.

mod adam;
mod checkpoint;
pub mod kernels;
mod matrix;
mod mlp;
mod tape;

pub use adam::{clip_grad_norm, Adam, AdamState, StepOutcome};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use matrix::{gemm, matmul, Matrix};
pub use mlp::{HiddenActivation, Mlp, MlpBinding, MlpSpec, OutputActivation};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("dimension mismatch at {layer}: expected {expected}, got {actual}")]
    DimensionMismatch { layer: String, expected: usize, actual: usize },
    #[error("backward called without a recorded forward pass")]
    NoTrace,
    #[error("loss must be a 1x1 scalar, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A named parameter with its gradient buffer.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self { name: name.into(), value, grad }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}
