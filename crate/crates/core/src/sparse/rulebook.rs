use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Sites;
use crate::geometry::VoxelCoord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    /// Output sites equal input sites.
    Submanifold,
    /// Downsampling: output sites are `floor(c / stride)` of the input sites.
    Strided,
    /// Exact transpose of a strided rulebook.
    Deconv,
}

/// Kernel offsets `{−r..r}³` in a fixed order; index `((dx+r)·k + (dy+r))·k + (dz+r)`.
pub fn kernel_offsets(kernel_size: usize) -> Vec<VoxelCoord> {
    let r = (kernel_size / 2) as i32;
    let mut out = Vec::with_capacity(kernel_size.pow(3));
    for dx in -r..=r {
        for dy in -r..=r {
            for dz in -r..=r {
                out.push([dx, dy, dz]);
            }
        }
    }
    out
}

/// Per-offset `(in_row, out_row)` pairs driving gather-multiply-scatter.
///
/// Geometric relation for every rule: `in = out·stride + δ` (submanifold:
/// stride 1; deconv: the same relation with the roles of the two site sets
/// exchanged).
#[derive(Debug, Clone)]
pub struct Rulebook {
    pub kind: ConvKind,
    pub kernel_size: usize,
    pub stride: u32,
    pub offsets: Vec<VoxelCoord>,
    pub rules: Vec<Vec<(u32, u32)>>,
    pub in_sites: Arc<Sites>,
    pub out_sites: Arc<Sites>,
}

impl Rulebook {
    pub fn num_rules(&self) -> usize {
        self.rules.iter().map(Vec::len).sum()
    }
}

fn check_kernel(kernel_size: usize) -> Result<()> {
    if kernel_size % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "kernel size must be odd, got {kernel_size}"
        )));
    }
    Ok(())
}

pub fn build_rulebook_submanifold(sites: &Arc<Sites>, kernel_size: usize) -> Result<Rulebook> {
    check_kernel(kernel_size)?;
    let offsets = kernel_offsets(kernel_size);
    let mut rules = vec![Vec::new(); offsets.len()];
    for (o, c) in sites.coords().iter().enumerate() {
        for (j, d) in offsets.iter().enumerate() {
            let q = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
            if let Some(i) = sites.row_of(&q) {
                rules[j].push((i as u32, o as u32));
            }
        }
    }
    Ok(Rulebook {
        kind: ConvKind::Submanifold,
        kernel_size,
        stride: 1,
        offsets,
        rules,
        in_sites: sites.clone(),
        out_sites: sites.clone(),
    })
}

/// Output cell `o` gathers the inputs at `o·stride + δ`; the output sites are
/// the distinct `floor(c / stride)` of the input sites.
pub fn build_rulebook_strided(
    sites: &Arc<Sites>,
    kernel_size: usize,
    stride: u32,
) -> Result<Rulebook> {
    check_kernel(kernel_size)?;
    if stride < 2 {
        return Err(Error::InvalidConfig(format!("stride must be ≥ 2, got {stride}")));
    }
    let s = stride as i32;
    let mut out: Vec<VoxelCoord> = sites
        .coords()
        .iter()
        .map(|c| [c[0].div_euclid(s), c[1].div_euclid(s), c[2].div_euclid(s)])
        .collect();
    out.sort_unstable();
    out.dedup();
    let out_sites = Arc::new(Sites::new(out, sites.stride_level() * stride)?);

    let offsets = kernel_offsets(kernel_size);
    let mut rules = vec![Vec::new(); offsets.len()];
    for (o, c) in out_sites.coords().iter().enumerate() {
        let base = [c[0] * s, c[1] * s, c[2] * s];
        for (j, d) in offsets.iter().enumerate() {
            let q = [base[0] + d[0], base[1] + d[1], base[2] + d[2]];
            if let Some(i) = sites.row_of(&q) {
                rules[j].push((i as u32, o as u32));
            }
        }
    }
    Ok(Rulebook {
        kind: ConvKind::Strided,
        kernel_size,
        stride,
        offsets,
        rules,
        in_sites: sites.clone(),
        out_sites,
    })
}

/// Transpose of an encoder rulebook: outputs land exactly on the encoder's
/// input sites.
pub fn build_rulebook_deconv(down: &Rulebook) -> Result<Rulebook> {
    if down.kind != ConvKind::Strided {
        return Err(Error::InvalidConfig(format!(
            "deconv needs a strided rulebook, got {:?}",
            down.kind
        )));
    }
    let expected = down.in_sites.stride_level() * down.stride;
    if down.out_sites.stride_level() != expected {
        return Err(Error::StrideMismatch {
            expected,
            got: down.out_sites.stride_level(),
        });
    }
    let rules = down
        .rules
        .iter()
        .map(|r| r.iter().map(|&(i, o)| (o, i)).collect())
        .collect();
    Ok(Rulebook {
        kind: ConvKind::Deconv,
        kernel_size: down.kernel_size,
        stride: down.stride,
        offsets: down.offsets.clone(),
        rules,
        in_sites: down.out_sites.clone(),
        out_sites: down.in_sites.clone(),
    })
}
