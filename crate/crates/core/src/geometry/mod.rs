//! Voxelization and spatial indexing.

mod knn;
mod voxel;

pub use knn::{knn, KnnGraph};
pub use voxel::{relative_coords, voxel_center, voxelize, VoxelMap};

use alloc::vec::Vec;

use crate::{Error, Result, IGNORE_LABEL};

pub type Point = [f64; 3];
pub type VoxelCoord = [i32; 3];

/// N points with an optional remission channel and optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub xyz: Vec<Point>,
    pub intensity: Option<Vec<f64>>,
    pub labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(xyz: Vec<Point>) -> Self {
        PointCloud {
            xyz,
            intensity: None,
            labels: None,
        }
    }

    pub fn with_intensity(mut self, intensity: Vec<f64>) -> Result<Self> {
        if intensity.len() != self.xyz.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "{} intensities for {} points",
                intensity.len(),
                self.xyz.len()
            )));
        }
        self.intensity = Some(intensity);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.xyz.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "{} labels for {} points",
                labels.len(),
                self.xyz.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    /// Checks every label is below `classes` or is [`IGNORE_LABEL`].
    pub fn check_labels(&self, classes: usize) -> Result<&[u32]> {
        let labels = self.labels.as_deref().ok_or(Error::MissingLabels)?;
        for (index, &label) in labels.iter().enumerate() {
            if label != IGNORE_LABEL && label as usize >= classes {
                return Err(Error::LabelOutOfRange {
                    index,
                    label,
                    classes,
                });
            }
        }
        Ok(labels)
    }

    /// Rigid shift of every point.
    pub fn translated(&self, by: Point) -> Self {
        let mut out = self.clone();
        for p in out.xyz.iter_mut() {
            for a in 0..3 {
                p[a] += by[a];
            }
        }
        out
    }

    /// Reorders points so that new point `i` is old point `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        PointCloud {
            xyz: order.iter().map(|&i| self.xyz[i]).collect(),
            intensity: self
                .intensity
                .as_ref()
                .map(|v| order.iter().map(|&i| v[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|v| order.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Keeps only points inside the axis-aligned box `[lo, hi]`.
    pub fn cropped(&self, lo: Point, hi: Point) -> Self {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| (0..3).all(|a| self.xyz[i][a] >= lo[a] && self.xyz[i][a] <= hi[a]))
            .collect();
        self.permuted(&keep)
    }
}

#[inline]
pub(crate) fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
