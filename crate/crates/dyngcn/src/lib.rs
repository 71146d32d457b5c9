//! File formats, checkpoints and the training harness around `dyngcn-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod sequence;

pub use error::{Error, Result};
