//! File formats, data loading, the parallel training pipeline and the
//! command-line driver for FaceHop. The algorithms themselves live in
//! `facehop-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod format;
pub mod image_io;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
