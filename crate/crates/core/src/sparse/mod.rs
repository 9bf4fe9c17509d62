//! Rulebook-driven sparse 3D convolution over the active (occupied) voxels
//! only, and the U-Net assembled from it.

mod conv;
mod residual;
mod rulebook;
mod tensor;
mod unet;

pub use conv::SparseConv;
pub use residual::{ResidualBlock, ResidualCache};
pub use rulebook::{
    build_rulebook_deconv, build_rulebook_strided, build_rulebook_submanifold, kernel_offsets,
    ConvKind, Rulebook,
};
pub use tensor::{build_hash, CoordIndex, Sites, SparseTensor};
pub use unet::{DecoderStage, EncoderStage, UNet, UNetCache, UNetConfig, UNetGeometry};
