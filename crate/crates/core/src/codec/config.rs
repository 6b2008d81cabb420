use serde::{Deserialize, Serialize};

use crate::nn::TransformerConfig;
use crate::{Error, Result};

/// Frames per second as an exact reduced fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRate {
    pub num: u32,
    pub den: u32,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl FrameRate {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 {
            return Err(Error::Config("frame rate with zero denominator".into()));
        }
        let g = gcd(num as u64, den as u64).max(1) as u32;
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// `sample_rate / prod(strides)`, exact.
pub fn frame_rate(strides: &[usize], sample_rate: u32) -> Result<FrameRate> {
    if strides.is_empty() || strides.contains(&0) {
        return Err(Error::Config(format!("strides must be non-empty and positive, got {strides:?}")));
    }
    let hop: usize = strides.iter().product();
    let hop = u32::try_from(hop).map_err(|_| Error::Config(format!("hop {hop} too large")))?;
    FrameRate::new(sample_rate, hop)
}

/// Architecture of the codec generator (encoder, quantizer, decoder).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub sample_rate: u32,
    pub strides: Vec<usize>,
    pub base_channels: usize,
    pub latent_dim: usize,
    pub bottleneck: TransformerConfig,
    pub decoder_start_channels: usize,
    pub n_quantizers: usize,
    pub codebook_size: usize,
    pub proj_dim: usize,
    #[serde(default = "default_kernel")]
    pub residual_kernel: usize,
    #[serde(default = "default_dilations")]
    pub dilations: Vec<usize>,
}

fn default_kernel() -> usize {
    7
}

fn default_dilations() -> Vec<usize> {
    vec![1, 3, 9]
}

impl CodecConfig {
    /// Full-size 5 Hz architecture (32 x 256 quantizer).
    pub fn full_5hz() -> Self {
        Self {
            sample_rate: 16_000,
            strides: vec![8, 5, 5, 4, 4],
            base_channels: 64,
            latent_dim: 1024,
            bottleneck: TransformerConfig { layers: 8, heads: 8, hidden: 512, mlp: 2048 },
            decoder_start_channels: 2048,
            n_quantizers: 32,
            codebook_size: 256,
            proj_dim: 8,
            residual_kernel: 7,
            dilations: default_dilations(),
        }
    }

    /// Full-size 12.5 Hz variant (8 x 1024 quantizer).
    pub fn full_12_5hz() -> Self {
        Self {
            strides: vec![5, 4, 4, 4, 4],
            n_quantizers: 8,
            codebook_size: 1024,
            ..Self::full_5hz()
        }
    }

    /// Small CPU-friendly default: hop 320 at 16 kHz (50 frames/s).
    pub fn desk() -> Self {
        Self {
            sample_rate: 16_000,
            strides: vec![8, 5, 8],
            base_channels: 8,
            latent_dim: 64,
            bottleneck: TransformerConfig { layers: 2, heads: 4, hidden: 32, mlp: 64 },
            decoder_start_channels: 64,
            n_quantizers: 8,
            codebook_size: 256,
            proj_dim: 8,
            residual_kernel: 7,
            dilations: default_dilations(),
        }
    }

    /// Tiny configuration used by tests and the toy training protocol.
    pub fn miniature() -> Self {
        Self {
            sample_rate: 16_000,
            strides: vec![2, 2],
            base_channels: 8,
            latent_dim: 8,
            bottleneck: TransformerConfig { layers: 1, heads: 2, hidden: 16, mlp: 32 },
            decoder_start_channels: 16,
            n_quantizers: 4,
            codebook_size: 16,
            proj_dim: 4,
            residual_kernel: 7,
            dilations: default_dilations(),
        }
    }

    pub fn hop(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn frame_rate(&self) -> Result<FrameRate> {
        frame_rate(&self.strides, self.sample_rate)
    }

    /// Channel width after each encoder stage (input conv width first).
    pub fn encoder_widths(&self) -> Vec<usize> {
        (0..=self.strides.len()).map(|i| self.base_channels << i).collect()
    }

    /// Channel width entering each decoder stage, then the final width.
    pub fn decoder_widths(&self) -> Vec<usize> {
        (0..=self.strides.len()).map(|i| self.decoder_start_channels >> i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 {
            return err("sample_rate must be positive".into());
        }
        self.frame_rate()?;
        if self.base_channels == 0 || self.latent_dim == 0 || self.proj_dim == 0 || self.n_quantizers == 0 {
            return err("codec dims must be positive".into());
        }
        if self.codebook_size < 2 {
            return err(format!("codebook_size {} must be at least 2", self.codebook_size));
        }
        if self.residual_kernel % 2 == 0 {
            return err(format!("residual_kernel {} must be odd", self.residual_kernel));
        }
        if self.dilations.contains(&0) {
            return err("dilations must be positive".into());
        }
        let n = self.strides.len();
        if self.decoder_start_channels % (1 << n) != 0 || self.decoder_start_channels >> n == 0 {
            return err(format!(
                "decoder_start_channels {} cannot be halved {n} times",
                self.decoder_start_channels
            ));
        }
        if self.bottleneck.layers > 0 {
            self.bottleneck.validate("bottleneck")?;
        } else if self.bottleneck.hidden == 0 {
            return err("bottleneck hidden must be positive".into());
        }
        Ok(())
    }
}
