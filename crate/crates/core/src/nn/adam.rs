use alloc::string::ToString;
use alloc::vec::Vec;

use super::{Matrix, Parameterized};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every parameter of one model, in the
/// model's parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: Vec<(Matrix, Matrix)>,
}

impl AdamState {
    pub fn new<M: Parameterized + ?Sized>(config: AdamConfig, model: &M) -> Self {
        let moments = model
            .params()
            .iter()
            .map(|p| {
                let (r, c) = p.shape();
                (Matrix::zeros(r, c), Matrix::zeros(r, c))
            })
            .collect();
        AdamState {
            config,
            step: 0,
            moments,
        }
    }

    /// Applies one bias-corrected Adam update from the current gradients.
    /// Gradients are left untouched.
    pub fn apply<M: Parameterized + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut params = model.params_mut();
        if let Some(p) = params.iter().enumerate().find_map(|(i, p)| {
            let ok = self
                .moments
                .get(i)
                .is_some_and(|(m, v)| m.shape() == p.shape() && v.shape() == p.shape());
            (!ok).then(|| p.name().to_string())
        }) {
            return Err(Error::UninitializedOptimizer(p));
        }
        if params.len() != self.moments.len() {
            return Err(Error::UninitializedOptimizer("<extra optimizer state>".to_string()));
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            let g = p.grad.as_slice();
            let theta = p.value.as_mut_slice();
            for (((x, g), m), v) in theta
                .iter_mut()
                .zip(g)
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    fn scalar(name: &str, v: f64) -> Param {
        Param::new(name, Matrix::from_rows(&[[v]]))
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut ps = alloc::vec![scalar("a", 1.5), scalar("b", -2.0)];
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        for _ in 0..5 {
            adam.apply(&mut ps).unwrap();
        }
        assert_eq!(ps[0].value.as_slice(), &[1.5]);
        assert_eq!(ps[1].value.as_slice(), &[-2.0]);
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = alloc::vec![scalar("a", 0.0)];
        ps[0].grad = Matrix::from_rows(&[[0.5]]);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        adam.apply(&mut ps).unwrap();
        // m̂ = g, v̂ = g², Δ = lr·g/(|g|+ε)
        let expected = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((ps[0].value.get(0, 0) - expected).abs() < 1e-18);
        assert_eq!(ps[0].grad.as_slice(), &[0.5]);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut ps = alloc::vec![scalar("a", 0.3), scalar("b", 0.3)];
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        for i in 0..20 {
            let g = libm::sin(i as f64);
            for p in ps.iter_mut() {
                p.grad = Matrix::from_rows(&[[g]]);
            }
            adam.apply(&mut ps).unwrap();
        }
        assert_eq!(ps[0].value, ps[1].value);
    }

    #[test]
    fn uninitialized_state_is_an_error() {
        let mut ps = alloc::vec![scalar("a", 0.0), scalar("b", 0.0)];
        let mut adam = AdamState::new(AdamConfig::default(), &ps[..1].to_vec());
        let err = adam.apply(&mut ps).unwrap_err();
        assert_eq!(err, Error::UninitializedOptimizer("b".into()));
    }
}
