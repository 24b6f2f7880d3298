//! Trademark image retrieval: feature extraction, bag-of-visual-words indexing,
//! rank fusion and a benchmark harness for comparing retrieval pipelines.

pub mod bench;
pub mod cli;
pub mod codebook;
pub mod config;
pub mod error;
pub mod featfile;
pub mod fusion;
pub mod global;
pub mod index;
pub mod keypoints;
pub mod metrics;
pub mod pipeline;
mod plane;
pub mod raster;
pub mod synth;
pub mod textmask;

pub use error::{Error, Result};
