//! Dense co-attention network for visual question answering on f64 tensors
//! with tape-based reverse-mode autodiff, plus a synthetic planted-rule task
//! to train and probe it.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod coattn;
pub mod config;
pub mod encoder;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod nn;
pub mod predict;
pub mod tensor;
pub mod train;

pub use config::DcnConfig;
pub use error::{DcnError, Result};
pub use graph::{Graph, NodeId};
pub use model::Dcn;
pub use tensor::Tensor;
