//! Dense `f64` tensors, forward kernels, a differentiation tape, parameter
//! storage, a portable PRNG and the checkpoint container.

pub mod checkpoint;
mod gradcheck;
pub mod kernels;
mod params;
mod prng;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use params::ParamStore;
pub use prng::Prng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("empty support: every entry of a softmax row is excluded")]
    EmptySupport,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("non-deterministic function: repeated forward passes disagree")]
    NonDeterministic,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}
