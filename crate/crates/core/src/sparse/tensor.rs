use alloc::sync::Arc;
use alloc::vec::Vec;

use hashbrown::HashMap;

use crate::geometry::VoxelCoord;
use crate::nn::Matrix;
use crate::{Error, Result};

/// Exact-match coordinate → row lookup.
#[derive(Debug, Clone, Default)]
pub struct CoordIndex {
    map: HashMap<VoxelCoord, u32>,
}

impl CoordIndex {
    #[inline]
    pub fn get(&self, c: &VoxelCoord) -> Option<usize> {
        self.map.get(c).map(|&r| r as usize)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn build_hash(coords: &[VoxelCoord]) -> Result<CoordIndex> {
    let mut map = HashMap::with_capacity(coords.len());
    for (row, c) in coords.iter().enumerate() {
        if map.insert(*c, row as u32).is_some() {
            return Err(Error::DuplicateCoordinate(*c));
        }
    }
    Ok(CoordIndex { map })
}

/// The active sites of a sparse tensor: unique coordinates in lexicographic
/// order, expressed in units of `stride_level` voxels.
#[derive(Debug, Clone)]
pub struct Sites {
    coords: Vec<VoxelCoord>,
    index: CoordIndex,
    stride_level: u32,
}

impl Sites {
    /// Sorts `coords`; fails on duplicates.
    pub fn new(mut coords: Vec<VoxelCoord>, stride_level: u32) -> Result<Self> {
        coords.sort_unstable();
        if let Some(w) = coords.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateCoordinate(w[0]));
        }
        let index = build_hash(&coords)?;
        Ok(Sites {
            coords,
            index,
            stride_level,
        })
    }

    pub fn coords(&self) -> &[VoxelCoord] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn stride_level(&self) -> u32 {
        self.stride_level
    }

    #[inline]
    pub fn row_of(&self, c: &VoxelCoord) -> Option<usize> {
        self.index.get(c)
    }

    pub(crate) fn same_as(self: &Arc<Self>, other: &Arc<Self>) -> bool {
        Arc::ptr_eq(self, other)
            || (self.stride_level == other.stride_level && self.coords == other.coords)
    }
}

/// Feature rows attached to a shared set of active sites.
#[derive(Debug, Clone)]
pub struct SparseTensor {
    pub sites: Arc<Sites>,
    pub feats: Matrix,
}

impl SparseTensor {
    pub fn new(sites: Arc<Sites>, feats: Matrix) -> Result<Self> {
        if feats.rows() != sites.len() {
            return Err(Error::shape("sparse tensor", feats.shape(), (sites.len(), feats.cols())));
        }
        Ok(SparseTensor { sites, feats })
    }

    /// Builds the sites from (possibly unsorted) coordinates, permuting the
    /// feature rows to match.
    pub fn from_coords(coords: Vec<VoxelCoord>, feats: Matrix, stride_level: u32) -> Result<Self> {
        if feats.rows() != coords.len() {
            return Err(Error::shape("sparse tensor", feats.shape(), (coords.len(), feats.cols())));
        }
        let sites = Sites::new(coords.clone(), stride_level)?;
        let mut sorted = Matrix::zeros(feats.rows(), feats.cols());
        for (r, c) in coords.iter().enumerate() {
            let dst = sites.row_of(c).expect("site just inserted");
            sorted.row_mut(dst).copy_from_slice(feats.row(r));
        }
        Ok(SparseTensor {
            sites: Arc::new(sites),
            feats: sorted,
        })
    }

    pub fn coords(&self) -> &[VoxelCoord] {
        self.sites.coords()
    }

    pub fn stride_level(&self) -> u32 {
        self.sites.stride_level()
    }

    pub fn width(&self) -> usize {
        self.feats.cols()
    }

    pub fn with_feats(&self, feats: Matrix) -> Result<Self> {
        SparseTensor::new(self.sites.clone(), feats)
    }
}
