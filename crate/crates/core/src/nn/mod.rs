//! Minimal reverse-mode compute layer: the handful of differentiable ops the
//! style network needs, an Adam optimiser and a finite-difference checker.

mod adam;
mod gradcheck;
mod param;
mod scalar;
mod suite;
mod tape;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport, Objective, Precision};
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tape::{
    elu, layer_norm_in_place, softmax_in_place, BoneLossSpec, Gradients, Tape, Var,
    LAYER_NORM_EPS, NORM_STABILIZER,
};
pub use suite::{check_layers, reference};
pub use tensor::Tensor;

use rand::Rng;

/// Glorot-uniform initialised tensor.
pub fn glorot<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, bound, rng)
}
