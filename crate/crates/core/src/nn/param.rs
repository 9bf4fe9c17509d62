use alloc::string::String;
use alloc::vec::Vec;

use super::Matrix;

/// A trainable matrix and its gradient buffer.
///
/// Gradients accumulate across backward calls until [`Param::zero_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything owning parameters in a fixed, deterministic order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.as_slice().len()).sum()
    }
}

impl Parameterized for Param {
    fn params(&self) -> Vec<&Param> {
        alloc::vec![self]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        alloc::vec![self]
    }
}

impl Parameterized for Vec<Param> {
    fn params(&self) -> Vec<&Param> {
        self.iter().collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.iter_mut().collect()
    }
}
