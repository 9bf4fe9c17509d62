//! Minimal differentiable substrate: dense matrices, parameters with
//! accumulating gradients, a few layers with hand-written backward passes,
//! Adam, and a central-difference gradient checker.

mod adam;
mod gradcheck;
pub mod init;
mod layers;
mod matrix;
mod param;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use layers::{
    linear_backward, linear_forward, relu, relu_backward, softmax_rows, Linear, Mlp, MlpCache,
    ScaleShift,
};
pub use matrix::{Matrix, View};
pub use param::{Param, Parameterized};
