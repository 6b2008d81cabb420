#![allow(dead_code)]

use std::path::Path;

use ucodec_cli::config::RunConfig;
use ucodec_cli::wav::write_wav;
use ucodec_core::codec::{CodecConfig, Waveform};
use ucodec_core::lm::LmConfig;
use ucodec_core::nn::TransformerConfig;
use ucodec_core::objectives::{LossWeights, MelConfig};

pub const SR: u32 = 16_000;

pub fn sine(freq: f64, amp: f64, len: usize) -> Waveform {
    let s = (0..len).map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SR as f64).sin()) as f32).collect();
    Waveform::new(s, SR)
}

/// Miniature codec with mel-only training, the toy overfit settings.
pub fn toy_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.codec = CodecConfig::miniature();
    cfg.lm = LmConfig::desk(cfg.codec.n_quantizers, cfg.codec.codebook_size);
    cfg.train.lr = 3e-3;
    cfg.train.warmup_steps = 100;
    cfg.train.excerpt = 512;
    cfg.train.weights = LossWeights { adversarial: 0.0, feature_matching: 0.0, ..LossWeights::default() };
    cfg.train.mel = MelConfig::smallest(3);
    cfg
}

/// Tiny 5 frames/s codec and LM for synthesis tests.
pub fn five_hz_config(n: usize, c: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.codec = CodecConfig {
        strides: vec![8, 20, 20],
        base_channels: 2,
        latent_dim: 8,
        bottleneck: TransformerConfig { layers: 0, heads: 1, hidden: 8, mlp: 8 },
        decoder_start_channels: 16,
        n_quantizers: n,
        codebook_size: c,
        proj_dim: 4,
        ..CodecConfig::miniature()
    };
    let tf = TransformerConfig { layers: 1, heads: 2, hidden: 32, mlp: 64 };
    cfg.lm = LmConfig { global: tf, local: tf, max_frames: 10, ..LmConfig::desk(n, c) };
    cfg.train.excerpt = 3200;
    cfg.train.mel = MelConfig::smallest(3);
    cfg.train.weights = LossWeights { adversarial: 0.0, feature_matching: 0.0, ..LossWeights::default() };
    cfg
}

pub fn write_sines(dir: &Path, freqs: &[f64], len: usize) {
    for (i, f) in freqs.iter().enumerate() {
        write_wav(dir.join(format!("clip{i}.wav")), &sine(*f, 0.5, len)).unwrap();
    }
}
