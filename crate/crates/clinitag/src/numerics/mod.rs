//! Dense f64 tensors, named trainable parameters, stable reductions, and a
//! finite-difference gradient checker.

mod gradcheck;
mod params;
mod rng;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckEntry, GradCheckReport};
pub use params::{Adam, Param, ParameterStore};
pub use rng::Rng;
pub use tensor::{log_sum_exp, softmax, Tensor};

pub(crate) use rng::stable_hash;
pub(crate) use tensor::{log_sum_exp_slice, softmax_slice};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("axis {axis} out of range for tensor of rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("reduction over empty axis {axis}")]
    EmptyAxis { axis: usize },
    #[error("parameter `{0}` already defined")]
    DuplicateParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("loss function is not deterministic: {first} vs {second}")]
    NonDeterministicLoss { first: f64, second: f64 },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}
