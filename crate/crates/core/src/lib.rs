//! Training laboratory for output decay: a penalty pulling every logit toward
//! a small constant, studied together with calibration, output statistics,
//! activation sparsity and label-noise robustness on desk-scale networks.

pub mod analysis;
pub mod data;
pub mod error;
pub mod exec;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod regularizers;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use tensor::Tensor;
