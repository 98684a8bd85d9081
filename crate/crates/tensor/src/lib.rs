//! Reverse-mode automatic differentiation for small convolutional networks.
//!
//! The crate is deliberately narrow: dense `f32` tensors in NCHW layout, a
//! define-by-run [`Graph`] that records every operation of one forward pass,
//! and a [`ParamStore`] that owns trainable weights and normalization buffers
//! across passes. All kernels are single-threaded and deterministic, so two
//! runs over the same inputs produce bit-identical values and gradients.

mod error;
mod gemm;
mod graph;
pub mod ops;
mod params;
mod tensor;

pub use error::TensorError;
pub use graph::{Gradients, Graph, Mode, NodeId};
pub use ops::conv::ConvOpts;
pub use ops::norm::{BatchNormCfg, RunningStats};
pub use params::{ParamEntry, ParamId, ParamKind, ParamStore};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, TensorError>;
