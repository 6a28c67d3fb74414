//! Allocation-only core of the strata toolkit.
//!
//! Everything in this crate is pure computation over in-memory values:
//! dense tensors and the kernels that operate on them, a tape for reverse-mode
//! differentiation, a tracing graph compiler, tokenizers, label-aware image
//! augmentation, and the backbone/task model tiers built on top of those.
//! Filesystem, threads and the command-line tools live in the `strata` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod backend;
mod error;
pub mod graph;
pub mod model;
pub mod ops;
mod real;
pub mod rng;
pub mod tensor;
pub mod text;
pub mod vision;

pub use backend::{Backend, BinaryOp, ReduceOp, Reference, UnaryOp};
pub use error::{Error, Result};
pub use real::{Element, Real};
pub use rng::Rng;
pub use tensor::{DType, Tensor};
