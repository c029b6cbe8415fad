//! Split federated learning engine.
//!
//! A small dense/convolutional network engine in `f64`, the machinery to cut a
//! network between a client half and a training-server half, label-skewed data
//! partitioning, the four training protocols (FedAvg, vanilla split learning,
//! SFL-V1 and SFL-V2) and estimators for the smoothness, variance and
//! heterogeneity constants that appear in the SFL-V1 convergence bound.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and wall
//! clock timing live in the `sfl-lab` companion crate.

#![no_std]
// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod diagnostics;
mod error;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod model;
pub mod optim;
pub mod protocol;
pub mod rng;
pub mod split;
pub mod tensor;

pub use error::{Error, Result};
pub use layer::{Layer, LayerKind, LayerSpec};
pub use loss::Loss;
pub use model::{BlockSpec, LayeredModel, ModelSpec};
pub use optim::{OptimizerKind, OptimizerState};
pub use split::{CutPayloadProfile, SplitModel};
pub use tensor::Tensor;
