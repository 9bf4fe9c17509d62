//! Dense zero-filled 3D convolution over a cubic grid, used as the reference
//! the sparse layers are checked and benchmarked against.

use pcsc_core::geometry::VoxelCoord;
use pcsc_core::nn::Matrix;
use pcsc_core::sparse::{kernel_offsets, SparseConv};

use crate::{Error, Result};

/// Feature volume over `[0, side)³`, one row per cell in x-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    pub side: usize,
    pub feats: Matrix,
}

impl DenseGrid {
    pub fn zeros(side: usize, width: usize) -> Self {
        DenseGrid {
            side,
            feats: Matrix::zeros(side * side * side, width),
        }
    }

    pub fn index(&self, c: &VoxelCoord) -> Option<usize> {
        let s = self.side as i32;
        if c.iter().all(|&v| (0..s).contains(&v)) {
            let (x, y, z) = (c[0] as usize, c[1] as usize, c[2] as usize);
            Some((x * self.side + y) * self.side + z)
        } else {
            None
        }
    }

    /// Scatters sparse rows into an otherwise zero volume.
    pub fn from_sparse(side: usize, coords: &[VoxelCoord], feats: &Matrix) -> Result<Self> {
        let mut grid = DenseGrid::zeros(side, feats.cols());
        for (r, c) in coords.iter().enumerate() {
            let i = grid
                .index(c)
                .ok_or_else(|| Error::Data(format!("coordinate {c:?} outside the {side}³ grid")))?;
            grid.feats.row_mut(i).copy_from_slice(feats.row(r));
        }
        Ok(grid)
    }

    pub fn row_at(&self, c: &VoxelCoord) -> Option<&[f64]> {
        self.index(c).map(|i| self.feats.row(i))
    }
}

/// `out[o] = bias + Σ_δ in[o·stride + δ]·W[δ]` at every cell of the output
/// grid of side `ceil(side / stride)`, with cells outside the input grid
/// reading as zero.
pub fn dense_conv(input: &DenseGrid, conv: &SparseConv, stride: usize) -> Result<DenseGrid> {
    if input.feats.cols() != conv.c_in() {
        return Err(Error::Data(format!(
            "dense input width {} but layer expects {}",
            input.feats.cols(),
            conv.c_in()
        )));
    }
    let out_side = input.side.div_ceil(stride);
    let mut out = DenseGrid::zeros(out_side, conv.c_out());
    let bias = conv.bias.value.row(0);
    for r in 0..out.feats.rows() {
        out.feats.row_mut(r).copy_from_slice(bias);
    }
    let cells = out.feats.rows();
    let mut shifted = Matrix::zeros(cells, conv.c_in());
    for (d, w) in kernel_offsets(conv.kernel_size).iter().zip(&conv.weights) {
        shifted.fill(0.0);
        for x in 0..out_side {
            for y in 0..out_side {
                for z in 0..out_side {
                    let o = [x as i32, y as i32, z as i32];
                    let q = [
                        o[0] * stride as i32 + d[0],
                        o[1] * stride as i32 + d[1],
                        o[2] * stride as i32 + d[2],
                    ];
                    if let Some(src) = input.row_at(&q) {
                        let dst = (x * out_side + y) * out_side + z;
                        shifted.row_mut(dst).copy_from_slice(src);
                    }
                }
            }
        }
        out.feats.gemm(1.0, shifted.view(), w.value.view(), 1.0)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pcsc_core::nn::init;
    use pcsc_core::sparse::ConvKind;

    #[test]
    fn single_voxel_center_identity() {
        let mut rng = init::rng(1);
        let mut conv = SparseConv::new("c", &mut rng, ConvKind::Submanifold, 3, 2, 2);
        for w in &mut conv.weights {
            w.value.fill(0.0);
        }
        conv.weights[13].value = Matrix::identity(2);
        let feats = Matrix::from_rows(&[[1.5, -2.0]]);
        let grid = DenseGrid::from_sparse(4, &[[1, 2, 3]], &feats).unwrap();
        let out = dense_conv(&grid, &conv, 1).unwrap();
        assert_eq!(out.row_at(&[1, 2, 3]).unwrap(), &[1.5, -2.0]);
        assert_eq!(out.feats.max_abs(), 2.0);
    }

    #[test]
    fn strided_output_side() {
        let mut rng = init::rng(2);
        let conv = SparseConv::new("c", &mut rng, ConvKind::Strided, 3, 1, 1);
        let grid = DenseGrid::zeros(5, 1);
        assert_eq!(dense_conv(&grid, &conv, 2).unwrap().side, 3);
    }

    #[test]
    fn outside_grid_is_an_error() {
        assert!(DenseGrid::from_sparse(4, &[[4, 0, 0]], &Matrix::zeros(1, 1)).is_err());
        assert!(DenseGrid::from_sparse(4, &[[-1, 0, 0]], &Matrix::zeros(1, 1)).is_err());
    }
}
