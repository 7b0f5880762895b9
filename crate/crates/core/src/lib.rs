//! Copy-gated summarization with user-steerable copy hooks.
//!
//! The forward model ([`model`]) exposes a per-word hook that decides whether
//! a source word may be copied; users force hooks to zero by deselecting
//! content, and [`inference`] decodes under those constraints. The separate
//! [`backward`] model attributes any summary, including user-written text,
//! back to the source words it used. [`session`] keeps the collaborative
//! state and [`service`] serves it as JSON.

pub mod backward;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod service;
pub mod session;
pub mod textproc;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil;

pub use backward::{BackwardModel, CoverageReport};
pub use inference::{GenerationRequest, GenerationResult, Mode};
pub use model::{HookState, ModelConfig, SummarizerModel};
pub use numerics::{ParamStore, Prng, Tape, Tensor};
pub use session::Session;
pub use textproc::{Document, Vocab};
