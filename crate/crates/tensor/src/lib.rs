//! Dense tensors and a reverse-mode differentiation tape.
//!
//! The numeric substrate for the HEAT encoder: a [`Tape`] records operations
//! on [`Var`] handles, [`ParameterStore`] owns trainable weights, [`Adam`]
//! updates them, and [`checkpoint`] persists them bit-exactly.

#![allow(clippy::needless_range_loop)]

mod attention;
pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use attention::{multihead_attention, MhaParams};
pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use optim::{sgd_step, Adam};
pub use params::{Gradients, ParamId, ParameterStore};
pub use scalar::Scalar;
pub use tape::{Backprop, Mask, Tape, Var};
pub use tensor::Tensor;
