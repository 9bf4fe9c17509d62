//! File formats, datasets, metrics, training and the `pcscnet` command line
//! built on top of `pcsc-core`.

pub mod bench;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod dense;
mod error;
pub mod gradcheck;
pub mod kitti;
pub mod metrics;
pub mod ply;
pub mod remap;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
