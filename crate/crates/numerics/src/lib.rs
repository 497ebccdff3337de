//! Deterministic tensor math with tape-based reverse-mode differentiation,
//! the layers and losses used by the SA models, Adam, and a finite-difference
//! gradient checker.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod fault;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use error::{NumericsError, Result};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{Activation, AttentionVars, LossKind};
pub use params::{ParamId, ParamStore};
pub use rng::RngSeed;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
