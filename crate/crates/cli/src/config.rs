use std::path::Path;

use serde::{Deserialize, Serialize};
use ucodec_core::codec::CodecConfig;
use ucodec_core::kernels::WarmupSchedule;
use ucodec_core::lm::LmConfig;
use ucodec_core::objectives::TrainConfig;
use ucodec_core::Error;

use crate::{CliError, Result};

/// Optimisation settings of LM training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmTrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub batch: usize,
    pub steps: usize,
    pub checkpoint_every: usize,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, warmup_steps: 100, batch: 4, steps: 500, checkpoint_every: 500 }
    }
}

impl LmTrainConfig {
    pub fn schedule(&self) -> WarmupSchedule {
        WarmupSchedule { peak: self.lr, warmup_steps: self.warmup_steps }
    }
}

/// Everything a command needs, read from one TOML document.
///
/// Missing sections take the desk-scale defaults; unknown keys anywhere are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub codec: CodecConfig,
    pub train: TrainConfig,
    pub lm: LmConfig,
    pub lm_train: LmTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let codec = CodecConfig::desk();
        let lm = LmConfig::desk(codec.n_quantizers, codec.codebook_size);
        Self { codec, train: TrainConfig::default(), lm, lm_train: LmTrainConfig::default() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every section on its own, then the cross-section dims.
    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.train.validate(self.codec.hop())?;
        self.lm.validate()?;
        if self.lm_train.batch == 0 || !(self.lm_train.lr > 0.0) {
            return Err(CliError::Config("lm_train lr and batch must be positive".into()));
        }
        check_lm_matches(&self.codec, &self.lm)
    }
}

/// The LM vocabulary must be the codec's token grid layout.
pub fn check_lm_matches(codec: &CodecConfig, lm: &LmConfig) -> Result<()> {
    if codec.n_quantizers != lm.n_quantizers || codec.codebook_size != lm.codebook_size {
        return Err(Error::Compatibility(format!(
            "codec has N={} C={}, LM has N={} C={}",
            codec.n_quantizers, codec.codebook_size, lm.n_quantizers, lm.codebook_size
        ))
        .into());
    }
    Ok(())
}
