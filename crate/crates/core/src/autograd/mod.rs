//! Dense tensors with reverse-mode differentiation.
//!
//! Values are recorded on a [`Tape`] as operations run; [`Tape::backward`]
//! replays the recorded vector-Jacobian products in reverse. Model weights
//! live in a [`ParamStore`] and are bound onto a fresh tape for every step.
//!
//! Only bias addition and scalar operations broadcast. Reductions run in a
//! fixed sequential order, so results are bit-reproducible.

mod adam;
mod conv;
mod elementwise;
mod nn;
mod param;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use nn::BatchNormMode;
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Backward, BackwardCtx, Tape, Var};
pub use tensor::{Init, Tensor};

