//! The backbone and task tiers.
//!
//! A [`Backbone`] is a feature extractor with a deterministic parameter
//! naming scheme; [`attach_head`] turns it into a [`TaskModel`] that accepts
//! raw strings or images, trains with [`train`] and decodes text with
//! [`TaskModel::generate`]. Preprocessing always runs eagerly, outside any
//! compiled graph.

mod backbone;
mod config;
mod generate;
mod task;
pub mod train;

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

pub use backbone::{
    attention_bias, bind, convnet_forward, padding_mask, param_specs, transformer_forward, Backbone, Bound, ParamInit,
    ParamSpec, LAYERNORM_EPS, MASK_BIAS,
};
pub use config::{BackboneConfig, ConvnetConfig, TransformerConfig};
pub use generate::{KvCache, Strategy};
pub use task::{
    attach_head, CompiledModel, EncodedBatch, Example, ImagePreprocessor, Prediction, Preprocessor, PreprocessorConfig,
    RawInput, TaskKind, TaskModel, TextPreprocessor, TrainBatch,
};

use crate::Error;

/// How a model call executes: op by op, or captured and optimised first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Eager,
    Graph,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Eager => "eager",
            Mode::Graph => "graph",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "eager" => Ok(Mode::Eager),
            "graph" => Ok(Mode::Graph),
            _ => Err(Error::Config(alloc::format!("unknown mode {:?} (expected eager or graph)", s))),
        }
    }
}
