//! Experiment harness around `sfl-core`: TOML configs, IDX loading, CSV
//! metrics, checkpoints and the drivers behind the `sfl-lab` binary.

// `!(x <= tol)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod metrics;

pub use config::ExperimentConfig;
pub use error::{LabError, Result};
