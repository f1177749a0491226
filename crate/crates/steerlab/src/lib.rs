//! Domain-adaptation lab for steering-prediction CNNs.
//!
//! The crate covers the full loop: synthetic road-scene data, image
//! preprocessing, two small convolutional regressors trained under four
//! strategies (pretrain on source data, pretrain on mirrored source data,
//! and fine-tuning either on target data), steering-error evaluation, and
//! integrated-gradients attention audits over dynamically segmented road
//! regions.
//!
//! Start with the runnable examples (`cargo run --release --example ...`)
//! or the `steerlab` binary for the batch pipeline.

pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod imaging;
pub mod models;
pub mod saliency;
pub mod training;
pub mod error;
pub mod evaluation;

pub use error::{Error, Result};
