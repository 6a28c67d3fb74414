//! Std companion to `strata-core`: the optimised backend, input pipelines,
//! tensor and image files, presets, data-parallel training, benchmarks and
//! fixtures.

pub mod backend;
mod error;

pub use backend::Optimized;
pub use error::{Error, Result};
pub use strata_core as core;
pub mod io;
pub mod pipeline;
pub mod distribute;
pub mod preset;
pub mod bench;
pub mod fixtures;
