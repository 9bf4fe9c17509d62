use alloc::format;
use alloc::vec::Vec;

use super::init::{xavier_uniform, InitRng};
use super::{Matrix, Param, Parameterized};
use crate::{Error, Result};

/// `out[n] = x[n]·w + b`.
pub fn linear_forward(x: &Matrix, w: &Param, b: &Param) -> Result<Matrix> {
    check_linear(x, w, b)?;
    let mut out = Matrix::zeros(x.rows(), w.value.cols());
    let bias = b.value.row(0);
    for r in 0..out.rows() {
        out.row_mut(r).copy_from_slice(bias);
    }
    out.gemm(1.0, x.view(), w.value.view(), 1.0)?;
    Ok(out)
}

/// Accumulates `xᵀ·upstream` into `w.grad` and the column sums of `upstream`
/// into `b.grad`; returns `upstream·wᵀ`.
pub fn linear_backward(
    x: &Matrix,
    w: &mut Param,
    b: &mut Param,
    upstream: &Matrix,
) -> Result<Matrix> {
    check_linear(x, w, b)?;
    if upstream.shape() != (x.rows(), w.value.cols()) {
        return Err(Error::shape(
            "linear_backward",
            upstream.shape(),
            (x.rows(), w.value.cols()),
        ));
    }
    w.grad.gemm(1.0, x.view().t(), upstream.view(), 1.0)?;
    b.grad.add_assign(&upstream.column_sums())?;
    Matrix::product(upstream.view(), w.value.view().t())
}

fn check_linear(x: &Matrix, w: &Param, b: &Param) -> Result<()> {
    if x.cols() != w.value.rows() {
        return Err(Error::shape("linear", x.shape(), w.shape()));
    }
    if b.shape() != (1, w.value.cols()) {
        return Err(Error::shape("linear bias", b.shape(), (1, w.value.cols())));
    }
    Ok(())
}

pub fn relu(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes `upstream` where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if x.shape() != upstream.shape() {
        return Err(Error::shape("relu_backward", x.shape(), upstream.shape()));
    }
    let mut out = upstream.clone();
    for (g, v) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if *v <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, rng: &mut InitRng, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Param::new(
                format!("{name}.weight"),
                xavier_uniform(rng, fan_in, fan_out, 1.0),
            ),
            bias: Param::new(format!("{name}.bias"), Matrix::zeros(1, fan_out)),
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_width(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        linear_forward(x, &self.weight, &self.bias)
    }

    pub fn backward(&mut self, x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        linear_backward(x, &mut self.weight, &mut self.bias, upstream)
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<&Param> {
        alloc::vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        alloc::vec![&mut self.weight, &mut self.bias]
    }
}

/// Stack of linear layers with ReLU between consecutive layers (none after
/// the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Inputs of every layer of one [`Mlp::forward`] call.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn new(name: &str, rng: &mut InitRng, widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), rng, w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            inputs.push(h);
            if i + 1 < self.layers.len() {
                h = relu(&z);
                pre_activations.push(z);
            } else {
                h = z;
            }
        }
        Ok((
            h,
            MlpCache {
                inputs,
                pre_activations,
            },
        ))
    }

    pub fn backward(&mut self, cache: &MlpCache, upstream: &Matrix) -> Result<Matrix> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::MissingActivations("mlp"));
        }
        let mut g = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                g = relu_backward(&cache.pre_activations[i], &g)?;
            }
            g = self.layers[i].backward(&cache.inputs[i], &g)?;
        }
        Ok(g)
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Per-channel affine `x·scale + shift`. Not part of the default network.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleShift {
    pub scale: Param,
    pub shift: Param,
}

impl ScaleShift {
    pub fn new(name: &str, width: usize) -> Self {
        ScaleShift {
            scale: Param::new(format!("{name}.scale"), Matrix::filled(1, width, 1.0)),
            shift: Param::new(format!("{name}.shift"), Matrix::zeros(1, width)),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.scale.value.cols() {
            return Err(Error::shape("scale_shift", x.shape(), self.scale.shape()));
        }
        let mut out = x.clone();
        let (s, b) = (self.scale.value.row(0), self.shift.value.row(0));
        for r in 0..out.rows() {
            for ((v, s), b) in out.row_mut(r).iter_mut().zip(s).zip(b) {
                *v = *v * s + b;
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        if x.shape() != upstream.shape() || x.cols() != self.scale.value.cols() {
            return Err(Error::shape("scale_shift_backward", x.shape(), upstream.shape()));
        }
        let mut dx = upstream.clone();
        for r in 0..x.rows() {
            let (xr, ur) = (x.row(r), upstream.row(r));
            for c in 0..x.cols() {
                let ds = xr[c] * ur[c];
                let s = self.scale.value.get(0, c);
                self.scale.grad.as_mut_slice()[c] += ds;
                self.shift.grad.as_mut_slice()[c] += ur[c];
                dx.set(r, c, ur[c] * s);
            }
        }
        Ok(dx)
    }
}

impl Parameterized for ScaleShift {
    fn params(&self) -> Vec<&Param> {
        alloc::vec![&self.scale, &self.shift]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        alloc::vec![&mut self.scale, &mut self.shift]
    }
}
