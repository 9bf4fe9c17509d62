use alloc::format;
use alloc::vec::Vec;

use super::conv::SparseConv;
use super::rulebook::{ConvKind, Rulebook};
use crate::nn::init::InitRng;
use crate::nn::{relu, relu_backward, Matrix, Param, Parameterized};
use crate::{Error, Result};

/// `out = relu(conv₂(relu(conv₁(x)))) + x`, both convolutions submanifold.
/// No activation follows the skip addition.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: SparseConv,
    pub conv2: SparseConv,
}

#[derive(Debug, Clone)]
pub struct ResidualCache {
    z1: Matrix,
    a1: Matrix,
    z2: Matrix,
}

impl ResidualBlock {
    pub fn new(name: &str, rng: &mut InitRng, kernel_size: usize, width: usize) -> Self {
        ResidualBlock {
            conv1: SparseConv::new(&format!("{name}.conv1"), rng, ConvKind::Submanifold, kernel_size, width, width),
            conv2: SparseConv::new(&format!("{name}.conv2"), rng, ConvKind::Submanifold, kernel_size, width, width),
        }
    }

    pub fn forward(&self, x: &Matrix, rb: &Rulebook) -> Result<(Matrix, ResidualCache)> {
        if self.conv1.c_in() != self.conv2.c_out() {
            return Err(Error::shape(
                "residual_block",
                (self.conv1.c_in(), self.conv1.c_out()),
                (self.conv2.c_in(), self.conv2.c_out()),
            ));
        }
        let z1 = self.conv1.forward_feats(x, rb)?;
        let a1 = relu(&z1);
        let z2 = self.conv2.forward_feats(&a1, rb)?;
        let mut out = relu(&z2);
        out.add_assign(x)?;
        Ok((out, ResidualCache { z1, a1, z2 }))
    }

    pub fn backward(
        &mut self,
        x: &Matrix,
        rb: &Rulebook,
        cache: &ResidualCache,
        upstream: &Matrix,
    ) -> Result<Matrix> {
        if cache.z1.rows() != x.rows() {
            return Err(Error::MissingActivations("residual_block"));
        }
        let dz2 = relu_backward(&cache.z2, upstream)?;
        let da1 = self.conv2.backward(&cache.a1, rb, &dz2)?;
        let dz1 = relu_backward(&cache.z1, &da1)?;
        let mut dx = self.conv1.backward(x, rb, &dz1)?;
        dx.add_assign(upstream)?;
        Ok(dx)
    }
}

impl Parameterized for ResidualBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv1.params();
        v.extend(self.conv2.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, init};
    use crate::sparse::rulebook::build_rulebook_submanifold;
    use crate::sparse::tensor::Sites;
    use alloc::sync::Arc;

    fn setup() -> (Arc<Sites>, Rulebook) {
        let sites = Arc::new(
            Sites::new(
                alloc::vec![[0, 0, 0], [1, 0, 0], [1, 1, 0], [2, 2, 2], [2, 2, 1], [5, 0, 0]],
                1,
            )
            .unwrap(),
        );
        let rb = build_rulebook_submanifold(&sites, 3).unwrap();
        (sites, rb)
    }

    #[test]
    fn zero_weights_give_identity() {
        let (_, rb) = setup();
        let mut rng = init::rng(1);
        let mut block = ResidualBlock::new("r", &mut rng, 3, 2);
        for p in block.params_mut() {
            p.value.fill(0.0);
        }
        let x = init::uniform(&mut rng, 6, 2, 1.0);
        let (out, _) = block.forward(&x, &rb).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn grad_check_block() {
        struct Probe {
            x: Param,
            block: ResidualBlock,
        }
        impl Parameterized for Probe {
            fn params(&self) -> Vec<&Param> {
                let mut v = alloc::vec![&self.x];
                v.extend(self.block.params());
                v
            }
            fn params_mut(&mut self) -> Vec<&mut Param> {
                let mut v = alloc::vec![&mut self.x];
                v.extend(self.block.params_mut());
                v
            }
        }
        let (_, rb) = setup();
        let mut rng = init::rng(21);
        let mut m = Probe {
            x: Param::new("x", init::uniform(&mut rng, 6, 3, 1.0)),
            block: ResidualBlock::new("r", &mut rng, 3, 3),
        };
        for p in m.block.params_mut() {
            p.value = init::uniform(&mut rng, p.shape().0, p.shape().1, 0.8);
        }
        let probe = init::uniform(&mut rng, 6, 3, 1.0);
        let report = grad_check(&mut m, 1e-5, 1e-4, |m, backward| {
            let (out, cache) = m.block.forward(&m.x.value, &rb)?;
            if backward {
                let dx = m.block.backward(&m.x.value, &rb, &cache, &probe)?;
                m.x.grad.add_assign(&dx)?;
            }
            out.dot(&probe)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
