//! Seeded weight initialization.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Matrix;

pub type InitRng = ChaCha8Rng;

pub fn rng(seed: u64) -> InitRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `±scale·√(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut InitRng, fan_in: usize, fan_out: usize, scale: f64) -> Matrix {
    let limit = scale * libm::sqrt(6.0 / (fan_in + fan_out).max(1) as f64);
    uniform(rng, fan_in, fan_out, limit)
}

pub fn uniform(rng: &mut InitRng, rows: usize, cols: usize, limit: f64) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    if limit > 0.0 {
        for v in m.as_mut_slice() {
            *v = rng.gen_range(-limit..limit);
        }
    }
    m
}
