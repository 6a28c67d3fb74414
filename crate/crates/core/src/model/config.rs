use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab: usize,
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
}

impl TransformerConfig {
    /// Small enough to train in seconds on the reference backend.
    pub fn tiny(vocab: usize) -> Self {
        TransformerConfig { vocab, layers: 2, heads: 2, dim: 32, ff_dim: 64, max_len: 16 }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvnetConfig {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    /// Output channels of each 3x3 stage.
    pub channels: Vec<usize>,
}

impl ConvnetConfig {
    pub fn tiny() -> Self {
        ConvnetConfig { height: 16, width: 16, in_channels: 3, channels: alloc::vec![8, 16] }
    }

    pub fn feature_dim(&self) -> usize {
        *self.channels.last().unwrap_or(&self.in_channels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneConfig {
    TransformerLm(TransformerConfig),
    Convnet(ConvnetConfig),
}

impl BackboneConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            BackboneConfig::TransformerLm(_) => "transformer_lm",
            BackboneConfig::Convnet(_) => "convnet",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BackboneConfig::TransformerLm(c) => {
                let dims = [c.vocab, c.layers, c.heads, c.dim, c.ff_dim, c.max_len];
                if dims.contains(&0) {
                    return Err(Error::Config(format!("transformer dims must be >= 1: {:?}", c)));
                }
                if c.dim % c.heads != 0 {
                    return Err(Error::Config(format!("dim {} is not divisible by {} heads", c.dim, c.heads)));
                }
            }
            BackboneConfig::Convnet(c) => {
                if c.height == 0 || c.width == 0 || c.channels.is_empty() || c.channels.contains(&0) {
                    return Err(Error::Config(format!("convnet dims must be >= 1 with at least one stage: {:?}", c)));
                }
                if c.in_channels != 1 && c.in_channels != 3 {
                    return Err(Error::Config(format!("convnet input must have 1 or 3 channels, got {}", c.in_channels)));
                }
            }
        }
        Ok(())
    }
}
