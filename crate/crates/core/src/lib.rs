//! Prediction of quantized community-endorsement levels for comments in
//! tree-structured discussions.
//!
//! The pipeline runs from JSONL threads ([`thread`]) through context
//! features ([`features`]) and karma quantization ([`quantizer`]) to a
//! labeled dataset ([`dataset`]), a neural classifier ([`model`]) trained
//! with Adam ([`training`]), macro-F1 evaluation ([`evaluation`]) and
//! post-hoc mode/gate analysis ([`analysis`]). [`synthgen`] produces
//! synthetic corpora with planted signal.

pub mod analysis;
pub mod checkpoint;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod model;
pub mod numerics;
pub mod quantizer;
pub mod synthgen;
pub mod thread;
pub mod training;

pub use error::{Error, Result};
