//! Minimal dense reverse-mode differentiation.
//!
//! Every value is a 2-D [`Matrix`]; a [`Tape`] records operations in
//! execution order and [`Tape::backward`] walks it in reverse. Trainable
//! tensors live in a [`ParamStore`] and are bound to a fresh tape for each
//! forward pass, so one store can be shared by many tapes.

mod check;
mod matrix;
mod optim;
mod params;
mod tape;

pub use check::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use matrix::{dot, Matrix};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{gelu, segment_softmax, sigmoid, Gradients, Tape, Var, BCE_EPS};
