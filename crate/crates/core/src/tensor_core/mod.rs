//! Dense tensors, differentiable layer primitives, reverse-mode gradients,
//! parameter initialization and the Adam optimizer.

mod adam;
mod graph;
mod init;
mod kernels;
mod norm;
mod stdw;
mod tensor;

use thiserror::Error;

pub use adam::{step_lr, AdamConfig, AdamState};
pub use graph::{Graph, Var};
pub use init::{xavier_bound, xavier_init};
pub use norm::{BatchNormStats, BatchStats, Mode, BN_EPSILON, BN_MOMENTUM};
pub use stdw::{TensorArchive, STDW_MAGIC, STDW_VERSION};
pub use tensor::{Real, Tensor};

/// Integer label map, `[n, h, w]` or `[h, w]`.
pub type LabelTensor = Tensor<u8>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank { op: &'static str, expected: usize, shape: Vec<usize> },
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: {detail}")]
    Param { op: &'static str, detail: String },
    #[error("label {label} at pixel (sample, row, col) = ({sample}, {row}, {col}) is outside 0..{classes}")]
    Label { sample: usize, row: usize, col: usize, label: u8, classes: usize },
}
