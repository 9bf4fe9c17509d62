use alloc::format;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::conv::SparseConv;
use super::residual::{ResidualBlock, ResidualCache};
use super::rulebook::{
    build_rulebook_deconv, build_rulebook_strided, build_rulebook_submanifold, ConvKind, Rulebook,
};
use super::tensor::{Sites, SparseTensor};
use crate::nn::init::InitRng;
use crate::nn::{relu, relu_backward, Matrix, Param, Parameterized};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub input_width: usize,
    /// Encoder stage widths, one stage per entry.
    pub widths: Vec<usize>,
    pub decoder_width: usize,
    pub kernel_size: usize,
    pub stride: u32,
}

/// Every rulebook one forward pass needs. Depends only on the input sites,
/// so it can be built once per scan and reused.
#[derive(Debug, Clone)]
pub struct UNetGeometry {
    /// Submanifold rulebooks for levels `0..=depth`.
    pub sub: Vec<Rulebook>,
    /// Strided rulebooks from level `l` to `l + 1`.
    pub down: Vec<Rulebook>,
    /// Transposes of `down`, from level `l + 1` back to `l`.
    pub up: Vec<Rulebook>,
}

impl UNetGeometry {
    pub fn build(sites: &Arc<Sites>, depth: usize, kernel_size: usize, stride: u32) -> Result<Self> {
        let mut sub = Vec::with_capacity(depth + 1);
        let mut down = Vec::with_capacity(depth);
        let mut up = Vec::with_capacity(depth);
        let mut level = sites.clone();
        sub.push(build_rulebook_submanifold(&level, kernel_size)?);
        for _ in 0..depth {
            let d = build_rulebook_strided(&level, kernel_size, stride)?;
            up.push(build_rulebook_deconv(&d)?);
            level = d.out_sites.clone();
            sub.push(build_rulebook_submanifold(&level, kernel_size)?);
            down.push(d);
        }
        Ok(UNetGeometry { sub, down, up })
    }

    pub fn depth(&self) -> usize {
        self.down.len()
    }

    pub fn input_sites(&self) -> &Arc<Sites> {
        &self.sub[0].in_sites
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStage {
    pub down: SparseConv,
    pub block: ResidualBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStage {
    pub up: SparseConv,
    pub fuse: SparseConv,
}

/// Sparse U-Net: each encoder stage is a stride-2 convolution followed by a
/// residual block; each decoder stage is the transposed convolution back to
/// the finer level, concatenation with that level's skip features, and a
/// submanifold fusion convolution. ReLU follows every convolution outside the
/// residual blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    pub config: UNetConfig,
    pub encoder: Vec<EncoderStage>,
    /// `decoder[l]` maps level `l + 1` back to level `l`.
    pub decoder: Vec<DecoderStage>,
}

#[derive(Debug, Clone)]
pub struct UNetCache {
    levels: Vec<Matrix>,
    down_pre: Vec<Matrix>,
    down_act: Vec<Matrix>,
    blocks: Vec<ResidualCache>,
    dec_in: Vec<Matrix>,
    up_pre: Vec<Matrix>,
    cat: Vec<Matrix>,
    fuse_pre: Vec<Matrix>,
}

impl UNet {
    pub fn new(name: &str, rng: &mut InitRng, config: UNetConfig) -> Result<Self> {
        if config.widths.is_empty() {
            return Err(Error::InvalidConfig("U-Net needs at least one stage".to_string()));
        }
        let depth = config.widths.len();
        let k = config.kernel_size;
        let skip_width = |l: usize| if l == 0 { config.input_width } else { config.widths[l - 1] };
        let mut encoder = Vec::with_capacity(depth);
        for l in 0..depth {
            encoder.push(EncoderStage {
                down: SparseConv::new(&format!("{name}.enc{l}.down"), rng, ConvKind::Strided, k, skip_width(l), config.widths[l]),
                block: ResidualBlock::new(&format!("{name}.enc{l}.res"), rng, k, config.widths[l]),
            });
        }
        let mut decoder = Vec::with_capacity(depth);
        for l in 0..depth {
            let out = if l == 0 { config.decoder_width } else { skip_width(l) };
            decoder.push(DecoderStage {
                up: SparseConv::new(&format!("{name}.dec{l}.up"), rng, ConvKind::Deconv, k, config.widths[l], skip_width(l)),
                fuse: SparseConv::new(&format!("{name}.dec{l}.fuse"), rng, ConvKind::Submanifold, k, 2 * skip_width(l), out),
            });
        }
        Ok(UNet {
            config,
            encoder,
            decoder,
        })
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    pub fn forward(&self, x: &SparseTensor, geom: &UNetGeometry) -> Result<(SparseTensor, UNetCache)> {
        let depth = self.depth();
        if geom.depth() != depth {
            return Err(Error::InvalidConfig(format!(
                "geometry has {} levels, network {}",
                geom.depth(),
                depth
            )));
        }
        if !x.sites.same_as(geom.input_sites()) {
            return Err(Error::Internal("U-Net geometry built for different sites".to_string()));
        }
        let mut cache = UNetCache {
            levels: Vec::with_capacity(depth + 1),
            down_pre: Vec::with_capacity(depth),
            down_act: Vec::with_capacity(depth),
            blocks: Vec::with_capacity(depth),
            dec_in: alloc::vec![Matrix::zeros(0, 0); depth],
            up_pre: alloc::vec![Matrix::zeros(0, 0); depth],
            cat: alloc::vec![Matrix::zeros(0, 0); depth],
            fuse_pre: alloc::vec![Matrix::zeros(0, 0); depth],
        };
        cache.levels.push(x.feats.clone());
        for (l, stage) in self.encoder.iter().enumerate() {
            let d = stage.down.forward_feats(&cache.levels[l], &geom.down[l])?;
            let a = relu(&d);
            let (e, rc) = stage.block.forward(&a, &geom.sub[l + 1])?;
            cache.down_pre.push(d);
            cache.down_act.push(a);
            cache.blocks.push(rc);
            cache.levels.push(e);
        }
        let mut cur = cache.levels[depth].clone();
        for l in (0..depth).rev() {
            let stage = &self.decoder[l];
            let u = stage.up.forward_feats(&cur, &geom.up[l])?;
            if geom.up[l].out_sites.len() != cache.levels[l].rows() {
                return Err(Error::Internal(format!("decoder level {l} sites differ from skip")));
            }
            let cat = relu(&u).hcat(&cache.levels[l])?;
            let f = stage.fuse.forward_feats(&cat, &geom.sub[l])?;
            cache.dec_in[l] = core::mem::replace(&mut cur, relu(&f));
            cache.up_pre[l] = u;
            cache.cat[l] = cat;
            cache.fuse_pre[l] = f;
        }
        let out = SparseTensor::new(x.sites.clone(), cur)?;
        Ok((out, cache))
    }

    /// Accumulates gradients into all stages; returns the input gradient.
    pub fn backward(&mut self, geom: &UNetGeometry, cache: &UNetCache, upstream: &Matrix) -> Result<Matrix> {
        let depth = self.depth();
        if cache.levels.len() != depth + 1 || cache.fuse_pre.len() != depth {
            return Err(Error::MissingActivations("unet"));
        }
        let mut d_levels: Vec<Matrix> = cache
            .levels
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        let mut g = upstream.clone();
        for l in 0..depth {
            let stage = &mut self.decoder[l];
            let gf = relu_backward(&cache.fuse_pre[l], &g)?;
            let gcat = stage.fuse.backward(&cache.cat[l], &geom.sub[l], &gf)?;
            let (gu, gskip) = gcat.split_cols(stage.up.c_out());
            d_levels[l].add_assign(&gskip)?;
            let gu = relu_backward(&cache.up_pre[l], &gu)?;
            g = stage.up.backward(&cache.dec_in[l], &geom.up[l], &gu)?;
        }
        d_levels[depth].add_assign(&g)?;
        for l in (0..depth).rev() {
            let stage = &mut self.encoder[l];
            let ga = stage
                .block
                .backward(&cache.down_act[l], &geom.sub[l + 1], &cache.blocks[l], &d_levels[l + 1])?;
            let gd = relu_backward(&cache.down_pre[l], &ga)?;
            let gin = stage.down.backward(&cache.levels[l], &geom.down[l], &gd)?;
            d_levels[l].add_assign(&gin)?;
        }
        Ok(d_levels.swap_remove(0))
    }
}

impl Parameterized for UNet {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for s in &self.encoder {
            v.extend(s.down.params());
            v.extend(s.block.params());
        }
        for s in &self.decoder {
            v.extend(s.up.params());
            v.extend(s.fuse.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for s in &mut self.encoder {
            v.extend(s.down.params_mut());
            v.extend(s.block.params_mut());
        }
        for s in &mut self.decoder {
            v.extend(s.up.params_mut());
            v.extend(s.fuse.params_mut());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, init};
    use rand::Rng;

    fn tiny(rng: &mut InitRng) -> UNet {
        UNet::new(
            "u",
            rng,
            UNetConfig {
                input_width: 2,
                widths: alloc::vec![2, 3, 3],
                decoder_width: 2,
                kernel_size: 3,
                stride: 2,
            },
        )
        .unwrap()
    }

    fn random_tensor(rng: &mut InitRng, n: usize, side: i32, width: usize) -> SparseTensor {
        let mut set = alloc::collections::BTreeSet::new();
        while set.len() < n {
            set.insert([rng.gen_range(0..side), rng.gen_range(0..side), rng.gen_range(0..side)]);
        }
        let coords: Vec<_> = set.into_iter().collect();
        SparseTensor::from_coords(coords, init::uniform(rng, n, width, 1.0), 1).unwrap()
    }

    #[test]
    fn output_sites_equal_input_sites() {
        let mut rng = init::rng(2);
        let net = tiny(&mut rng);
        for n in [1, 5, 40] {
            let x = random_tensor(&mut rng, n, 12, 2);
            let geom = UNetGeometry::build(&x.sites, 3, 3, 2).unwrap();
            let (y, _) = net.forward(&x, &geom).unwrap();
            assert_eq!(y.coords(), x.coords());
            assert_eq!(y.width(), 2);
        }
    }

    #[test]
    fn grad_check_unet() {
        struct Probe {
            x: Param,
            net: UNet,
        }
        impl Parameterized for Probe {
            fn params(&self) -> Vec<&Param> {
                let mut v = alloc::vec![&self.x];
                v.extend(self.net.params());
                v
            }
            fn params_mut(&mut self) -> Vec<&mut Param> {
                let mut v = alloc::vec![&mut self.x];
                v.extend(self.net.params_mut());
                v
            }
        }
        let mut rng = init::rng(31);
        let x = random_tensor(&mut rng, 24, 6, 2);
        let geom = UNetGeometry::build(&x.sites, 3, 3, 2).unwrap();
        let mut m = Probe {
            x: Param::new("x", x.feats.clone()),
            net: tiny(&mut rng),
        };
        for p in m.net.params_mut() {
            p.value = init::uniform(&mut rng, p.shape().0, p.shape().1, 0.7);
        }
        let probe = init::uniform(&mut rng, 24, 2, 1.0);
        let sites = x.sites.clone();
        let report = grad_check(&mut m, 1e-5, 1e-4, |m, backward| {
            let input = SparseTensor::new(sites.clone(), m.x.value.clone())?;
            let (y, cache) = m.net.forward(&input, &geom)?;
            if backward {
                let dx = m.net.backward(&geom, &cache, &probe)?;
                m.x.grad.add_assign(&dx)?;
            }
            y.feats.dot(&probe)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
