use serde::{Deserialize, Serialize};

use crate::nn::TransformerConfig;
use crate::{Error, Result};

/// Byte-level text vocabulary plus the BOS marker.
pub const TEXT_VOCAB: usize = 257;
pub const BOS_ID: usize = 256;

/// Dimensions and decoding settings of the hierarchical token model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub n_quantizers: usize,
    pub codebook_size: usize,
    pub global: TransformerConfig,
    pub local: TransformerConfig,
    /// Longest global sequence (text + BOS + patches).
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_k_top")]
    pub k_top: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_frames")]
    pub max_frames: usize,
}

fn default_max_len() -> usize {
    4096
}

fn default_k_top() -> usize {
    5
}

fn default_temperature() -> f64 {
    1.0
}

fn default_max_frames() -> usize {
    100
}

impl LmConfig {
    /// Two-layer, 128-wide global and local stacks.
    pub fn desk(n_quantizers: usize, codebook_size: usize) -> Self {
        let tf = TransformerConfig { layers: 2, heads: 4, hidden: 128, mlp: 512 };
        Self {
            n_quantizers,
            codebook_size,
            global: tf,
            local: tf,
            max_len: default_max_len(),
            k_top: default_k_top(),
            temperature: default_temperature(),
            max_frames: default_max_frames(),
        }
    }

    /// Full-size stacks (24-layer global, 8-layer local at the same width).
    /// Far too large to train here; used for MAC accounting.
    pub fn full_scale(n_quantizers: usize, codebook_size: usize) -> Self {
        Self {
            global: TransformerConfig { layers: 24, heads: 12, hidden: 1536, mlp: 6144 },
            local: TransformerConfig { layers: 8, heads: 12, hidden: 1536, mlp: 6144 },
            max_len: 15_000,
            ..Self::desk(n_quantizers, codebook_size)
        }
    }

    pub fn eos_id(&self) -> usize {
        self.codebook_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_quantizers == 0 || self.codebook_size < 2 {
            return Err(Error::Config(format!(
                "LM needs N >= 1 and C >= 2, got N={} C={}",
                self.n_quantizers, self.codebook_size
            )));
        }
        self.global.validate("lm.global")?;
        self.local.validate("lm.local")?;
        if self.k_top == 0 {
            return Err(Error::Config("k_top must be at least 1".into()));
        }
        if self.k_top > 1 && !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if self.max_len < 2 || self.max_frames == 0 {
            return Err(Error::Config("max_len and max_frames must be positive".into()));
        }
        Ok(())
    }
}
