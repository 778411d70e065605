//! Minimal differentiable-computation substrate.
//!
//! Dense arrays, the layer primitives the routing policy needs (affine maps,
//! multi-head attention, batch/instance normalization, activations, masked
//! softmax) and reverse-mode gradients of a scalar loss with respect to every
//! trainable parameter. Everything runs in 64-bit on the CPU; forward passes
//! are deterministic given parameters and inputs.

mod array;
mod ops;
mod param;
mod tape;

pub use array::DenseArray;
pub use ops::{affine, central_difference, multi_head_attention, MhaParams};
pub use param::{uniform_init, Buffer, BufferRef, Param, ParamGroup, ParamRef, ParamStore};
pub use tape::{Mask, NormKind, NormMode, Tape, Var, LEAKY_SLOPE};
