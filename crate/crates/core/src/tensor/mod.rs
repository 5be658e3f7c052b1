//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod checkpoint;
mod dense;
pub mod gradcheck;
mod params;
mod tape;

pub use checkpoint::Checkpoint;
pub use dense::{matmul_plain, Tensor};
pub use params::{AdamConfig, Gradients, ParamId, ParamStore};
pub use tape::{bce_term, softplus, SegmentLayout, Tape, Var};

pub(crate) use params::hex;
