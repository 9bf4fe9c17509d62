//! Core of a voxel-based LiDAR semantic segmentation network that combines
//! kernel-point convolution (per-voxel feature extraction) with a rulebook-driven
//! 3D sparse-convolution U-Net (feature propagation) and a boundary-aware loss.
//!
//! Everything here is pure computation over in-memory buffers: forward and
//! backward passes are written by hand for a fixed dataflow, so the crate
//! builds without `std` (an allocator is required). File formats, datasets and
//! the command line live in the companion `pcscnet` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod checkpoint;
mod error;
pub mod geometry;
pub mod kpconv;
pub mod loss;
pub mod model;
pub mod nn;
pub mod sparse;

pub use error::{Error, Result};

/// Label value marking a point that takes no part in the loss or the metrics.
pub const IGNORE_LABEL: u32 = u32::MAX;
