//! Spatio-temporal dual-stream segmentation network (ST-DSNN) for paired
//! sequential scans.
//!
//! * [`tensor_core`]: tensors, a tape-based autodiff graph, layer primitives, Adam.
//! * [`model`]: shared-weight dual encoders, additive bottleneck fusion with a
//!   residual block, shared-weight dual decoders.
//! * [`phantom`]: synthetic sequential phantoms, file formats, pairing and folds.
//! * [`training`]: paired crop augmentation, dual-stream loss, step-LR Adam loop, checkpoints.
//! * [`evaluation`]: DSC / Jaccard / PPV, Welch's t-test, cross-validation, overlays.
//! * [`cli`]: the `stdsnn` command-line driver.

pub mod cli;
pub mod evaluation;
pub mod format;
pub mod gradcheck;
pub mod model;
pub mod phantom;
pub mod rng;
pub mod tensor_core;
pub mod training;

pub use format::FormatError;
pub use tensor_core::{Graph, LabelTensor, Mode, Real, Tensor, TensorError, Var};
