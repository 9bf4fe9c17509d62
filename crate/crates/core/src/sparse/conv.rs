use alloc::format;
use alloc::vec::Vec;

use super::rulebook::{kernel_offsets, ConvKind, Rulebook};
use super::tensor::SparseTensor;
use crate::nn::init::{xavier_uniform, InitRng};
use crate::nn::{Matrix, Param, Parameterized};
use crate::{Error, Result};

/// Sparse convolution layer: one `C_in×C_out` weight per kernel offset and a
/// bias added once per output row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseConv {
    pub kind: ConvKind,
    pub kernel_size: usize,
    pub weights: Vec<Param>,
    pub bias: Param,
}

impl SparseConv {
    pub fn new(
        name: &str,
        rng: &mut InitRng,
        kind: ConvKind,
        kernel_size: usize,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        let taps = kernel_size.pow(3);
        // fan-in spans every tap
        let scale = libm::sqrt((c_in + c_out) as f64 / (taps * c_in + c_out) as f64);
        let weights = kernel_offsets(kernel_size)
            .iter()
            .enumerate()
            .map(|(j, _)| Param::new(format!("{name}.w{j}"), xavier_uniform(rng, c_in, c_out, scale)))
            .collect();
        SparseConv {
            kind,
            kernel_size,
            weights,
            bias: Param::new(format!("{name}.bias"), Matrix::zeros(1, c_out)),
        }
    }

    pub fn c_in(&self) -> usize {
        self.weights[0].shape().0
    }

    pub fn c_out(&self) -> usize {
        self.weights[0].shape().1
    }

    fn check(&self, input: &Matrix, rb: &Rulebook) -> Result<()> {
        if rb.kind != self.kind || rb.kernel_size != self.kernel_size {
            return Err(Error::InvalidConfig(format!(
                "{:?} layer (k={}) applied with {:?} rulebook (k={})",
                self.kind, self.kernel_size, rb.kind, rb.kernel_size
            )));
        }
        if input.rows() != rb.in_sites.len() || input.cols() != self.c_in() {
            return Err(Error::shape(
                "sparse_conv",
                input.shape(),
                (rb.in_sites.len(), self.c_in()),
            ));
        }
        Ok(())
    }

    /// `out[o] = bias + Σ_{(i,o) ∈ rules(δ)} in[i]·W[δ]`.
    pub fn forward(&self, x: &SparseTensor, rb: &Rulebook) -> Result<SparseTensor> {
        if !x.sites.same_as(&rb.in_sites) {
            return Err(Error::Internal("rulebook built for different sites".into()));
        }
        let feats = self.forward_feats(&x.feats, rb)?;
        SparseTensor::new(rb.out_sites.clone(), feats)
    }

    pub fn forward_feats(&self, input: &Matrix, rb: &Rulebook) -> Result<Matrix> {
        self.check(input, rb)?;
        let (c_in, c_out) = (self.c_in(), self.c_out());
        let mut out = Matrix::zeros(rb.out_sites.len(), c_out);
        let bias = self.bias.value.row(0);
        for r in 0..out.rows() {
            out.row_mut(r).copy_from_slice(bias);
        }
        let mut gathered = Vec::new();
        for (rules, w) in rb.rules.iter().zip(&self.weights) {
            if rules.is_empty() {
                continue;
            }
            let g = gather(input, rules.iter().map(|r| r.0), c_in, &mut gathered);
            let t = Matrix::product(g.view(), w.value.view())?;
            for (row, &(_, o)) in rules.iter().enumerate() {
                for (d, s) in out.row_mut(o as usize).iter_mut().zip(t.row(row)) {
                    *d += s;
                }
            }
            gathered = g.into_vec();
        }
        Ok(out)
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    pub fn backward(&mut self, input: &Matrix, rb: &Rulebook, upstream: &Matrix) -> Result<Matrix> {
        self.check(input, rb)?;
        let (c_in, c_out) = (self.c_in(), self.c_out());
        if upstream.shape() != (rb.out_sites.len(), c_out) {
            return Err(Error::shape(
                "sparse_conv_backward",
                upstream.shape(),
                (rb.out_sites.len(), c_out),
            ));
        }
        self.bias.grad.add_assign(&upstream.column_sums())?;
        let mut d_in = Matrix::zeros(input.rows(), c_in);
        let (mut gbuf, mut ubuf) = (Vec::new(), Vec::new());
        for (rules, w) in rb.rules.iter().zip(self.weights.iter_mut()) {
            if rules.is_empty() {
                continue;
            }
            let g = gather(input, rules.iter().map(|r| r.0), c_in, &mut gbuf);
            let u = gather(upstream, rules.iter().map(|r| r.1), c_out, &mut ubuf);
            w.grad.gemm(1.0, g.view().t(), u.view(), 1.0)?;
            let dg = Matrix::product(u.view(), w.value.view().t())?;
            for (row, &(i, _)) in rules.iter().enumerate() {
                for (d, s) in d_in.row_mut(i as usize).iter_mut().zip(dg.row(row)) {
                    *d += s;
                }
            }
            gbuf = g.into_vec();
            ubuf = u.into_vec();
        }
        Ok(d_in)
    }
}

fn gather(src: &Matrix, rows: impl ExactSizeIterator<Item = u32>, width: usize, buf: &mut Vec<f64>) -> Matrix {
    let n = rows.len();
    let mut data = core::mem::take(buf);
    data.clear();
    data.reserve(n * width);
    for r in rows {
        data.extend_from_slice(src.row(r as usize));
    }
    Matrix::from_vec(n, width, data).expect("gather buffer sized")
}

impl Parameterized for SparseConv {
    fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.weights.iter().collect();
        v.push(&self.bias);
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.weights.iter_mut().collect();
        v.push(&mut self.bias);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, init};
    use crate::sparse::rulebook::*;
    use crate::sparse::tensor::Sites;
    use alloc::sync::Arc;

    fn unit_conv(kind: ConvKind, c_in: usize, c_out: usize, value: f64) -> SparseConv {
        let mut rng = init::rng(0);
        let mut conv = SparseConv::new("c", &mut rng, kind, 3, c_in, c_out);
        for w in conv.weights.iter_mut() {
            w.value.fill(value);
        }
        conv
    }

    #[test]
    fn center_identity_passes_input() {
        let mut rng = init::rng(4);
        let mut conv = SparseConv::new("c", &mut rng, ConvKind::Submanifold, 3, 2, 2);
        conv.weights[13].value = Matrix::identity(2);
        let x = SparseTensor::from_coords(alloc::vec![[3, 3, 3]], Matrix::from_rows(&[[1.5, -2.0]]), 1).unwrap();
        let rb = build_rulebook_submanifold(&x.sites, 3).unwrap();
        let y = conv.forward(&x, &rb).unwrap();
        assert_eq!(y.feats, x.feats);
    }

    #[test]
    fn neighbors_sum() {
        let conv = unit_conv(ConvKind::Submanifold, 1, 1, 1.0);
        let x = SparseTensor::from_coords(
            alloc::vec![[0, 0, 0], [1, 0, 0]],
            Matrix::from_rows(&[[2.0], [5.0]]),
            1,
        )
        .unwrap();
        let rb = build_rulebook_submanifold(&x.sites, 3).unwrap();
        let y = conv.forward(&x, &rb).unwrap();
        assert_eq!(y.feats.as_slice(), &[7.0, 7.0]);
    }

    #[test]
    fn scalar_single_rule_backward() {
        let mut conv = unit_conv(ConvKind::Submanifold, 1, 1, 0.0);
        conv.weights[13].value = Matrix::from_rows(&[[3.0]]);
        conv.bias.value = Matrix::from_rows(&[[0.5]]);
        let x = Matrix::from_rows(&[[2.0]]);
        let sites = Arc::new(Sites::new(alloc::vec![[0, 0, 0]], 1).unwrap());
        let rb = build_rulebook_submanifold(&sites, 3).unwrap();
        assert_eq!(conv.forward_feats(&x, &rb).unwrap().as_slice(), &[6.5]);
        let dx = conv.backward(&x, &rb, &Matrix::from_rows(&[[4.0]])).unwrap();
        assert_eq!(dx.as_slice(), &[12.0]);
        assert_eq!(conv.weights[13].grad.as_slice(), &[8.0]);
        assert_eq!(conv.bias.grad.as_slice(), &[4.0]);

        conv.zero_grads();
        let dx = conv.backward(&x, &rb, &Matrix::zeros(1, 1)).unwrap();
        assert_eq!(dx.max_abs(), 0.0);
        assert!(conv.params().iter().all(|p| p.grad.max_abs() == 0.0));
    }

    #[test]
    fn mismatched_kind_or_width() {
        let conv = unit_conv(ConvKind::Strided, 2, 1, 1.0);
        let x = SparseTensor::from_coords(alloc::vec![[0, 0, 0]], Matrix::zeros(1, 2), 1).unwrap();
        let rb = build_rulebook_submanifold(&x.sites, 3).unwrap();
        assert!(conv.forward(&x, &rb).is_err());
        let conv = unit_conv(ConvKind::Submanifold, 3, 1, 1.0);
        assert!(conv.forward(&x, &rb).is_err());
    }

    #[test]
    fn empty_offsets_contribute_nothing() {
        let mut rng = init::rng(8);
        let conv = SparseConv::new("c", &mut rng, ConvKind::Submanifold, 3, 2, 3);
        let x = SparseTensor::from_coords(
            alloc::vec![[0, 0, 0], [0, 1, 0], [5, 5, 5]],
            init::uniform(&mut rng, 3, 2, 1.0),
            1,
        )
        .unwrap();
        let rb = build_rulebook_submanifold(&x.sites, 3).unwrap();
        let full = conv.forward(&x, &rb).unwrap();
        let mut pruned_rb = rb.clone();
        let mut pruned = conv.clone();
        let keep: Vec<usize> = (0..27).filter(|&j| !rb.rules[j].is_empty()).collect();
        pruned_rb.rules = keep.iter().map(|&j| rb.rules[j].clone()).collect();
        pruned_rb.offsets = keep.iter().map(|&j| rb.offsets[j]).collect();
        pruned.weights = keep.iter().map(|&j| conv.weights[j].clone()).collect();
        assert_eq!(pruned.forward(&x, &pruned_rb).unwrap().feats, full.feats);
    }

    struct Stack {
        x: Param,
        a: SparseConv,
        b: SparseConv,
    }

    impl Parameterized for Stack {
        fn params(&self) -> Vec<&Param> {
            let mut v = alloc::vec![&self.x];
            v.extend(self.a.params());
            v.extend(self.b.params());
            v
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            let mut v = alloc::vec![&mut self.x];
            v.extend(self.a.params_mut());
            v.extend(self.b.params_mut());
            v
        }
    }

    #[test]
    fn two_layer_grad_check() {
        let mut rng = init::rng(12);
        let coords: Vec<_> = [
            [0, 0, 0], [1, 0, 0], [1, 1, 0], [2, 1, 0], [2, 1, 1],
            [0, 2, 1], [3, 3, 3], [2, 2, 2], [1, 2, 2], [0, 0, 1],
        ]
        .to_vec();
        let sites = Arc::new(Sites::new(coords, 1).unwrap());
        let sub = build_rulebook_submanifold(&sites, 3).unwrap();
        let down = build_rulebook_strided(&sites, 3, 2).unwrap();
        let mut m = Stack {
            x: Param::new("x", init::uniform(&mut rng, 10, 2, 1.0)),
            a: SparseConv::new("a", &mut rng, ConvKind::Submanifold, 3, 2, 3),
            b: SparseConv::new("b", &mut rng, ConvKind::Strided, 3, 3, 2),
        };
        for p in m.a.params_mut().into_iter().chain(m.b.params_mut()) {
            p.value = init::uniform(&mut rng, p.shape().0, p.shape().1, 1.0);
        }
        let probe = init::uniform(&mut rng, down.out_sites.len(), 2, 1.0);
        let report = grad_check(&mut m, 1e-6, 1e-6, |m, backward| {
            let h = m.a.forward_feats(&m.x.value, &sub)?;
            let y = m.b.forward_feats(&h, &down)?;
            if backward {
                let dh = m.b.backward(&h, &down, &probe)?;
                let dx = m.a.backward(&m.x.value, &sub, &dh)?;
                m.x.grad.add_assign(&dx)?;
            }
            y.dot(&probe)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
