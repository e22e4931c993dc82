//! GViT: a chain-graph GCN feeding a transformer encoder, for gas mixture
//! identification and concentration estimation from variable-length
//! sensor-array recordings.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors, a reverse-mode tape and Adam.
//! - [`graph`]: chain topology over time points and GCN layers.
//! - [`model`]: the GViT architecture, checkpoints and the composition rule.
//! - [`ingest`]: recording parsing, decimation, air-baseline correction,
//!   segmentation, target normalisation and stratified splitting.
//! - [`train`]: RMSE training with validation-based model selection.
//! - [`eval`]: accuracy, confusion matrix, R²/RMSE reports and a KNN comparator.

pub mod error;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
