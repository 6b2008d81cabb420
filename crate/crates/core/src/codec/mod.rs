//! Waveform encoder, quantizer and decoder assembled into one model.

mod config;
mod net;

pub use config::{frame_rate, CodecConfig, FrameRate};
pub use net::{pad_to_hop, Decoder, Encoder, EncoderTaps, LatentSequence, Waveform};

use rand::Rng;

use crate::bitstream::TokenGrid;
use crate::frvq::{Frvq, QuantizationResult};
use crate::kernels::{Graph, ParamStore, Real, Tensor};
use crate::{Error, Result};

/// Generator weights and the modules that read them.
#[derive(Debug, Clone)]
pub struct CodecModel<T> {
    pub cfg: CodecConfig,
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub quantizer: Frvq,
    pub decoder: Decoder,
}

impl<T: Real> CodecModel<T> {
    pub fn new<R: Rng>(cfg: CodecConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &cfg, rng)?;
        let quantizer = Frvq::new(&mut store, cfg.n_quantizers, cfg.latent_dim, cfg.proj_dim, cfg.codebook_size, rng)?;
        let decoder = Decoder::new(&mut store, &cfg, rng)?;
        Ok(Self { cfg, store, encoder, quantizer, decoder })
    }

    fn check_input(&self, wave: &Waveform) -> Result<()> {
        if wave.sample_rate != self.cfg.sample_rate {
            return Err(Error::Format(format!(
                "sample rate {} Hz, model expects {} Hz",
                wave.sample_rate, self.cfg.sample_rate
            )));
        }
        let hop = self.cfg.hop();
        if wave.is_empty() || wave.len() % hop != 0 {
            return Err(Error::Alignment { len: wave.len(), hop });
        }
        Ok(())
    }

    /// Hop-aligned waveform to `[frames, D]` latents.
    pub fn encode(&self, wave: &Waveform) -> Result<LatentSequence<T>> {
        self.check_input(wave)?;
        let mut g = Graph::inference();
        let x = g.constant(wave.to_tensor());
        let z = self.encoder.forward(&mut g, &self.store, x)?;
        Ok(LatentSequence { values: g.value(z).clone(), frame_rate: self.cfg.frame_rate()? })
    }

    pub fn decode(&self, latent: &LatentSequence<T>) -> Result<Waveform> {
        let mut g = Graph::inference();
        let z = g.constant(latent.values.clone());
        let y = self.decoder.forward(&mut g, &self.store, z)?;
        Ok(self.to_wave(g.value(y)))
    }

    pub fn quantize(&self, latent: &LatentSequence<T>) -> Result<QuantizationResult<T>> {
        self.quantizer.quantize(&self.store, &latent.values)
    }

    /// Waveform to codes (the input must be hop-aligned).
    pub fn encode_codes(&self, wave: &Waveform) -> Result<TokenGrid> {
        let z = self.encode(wave)?;
        Ok(self.quantize(&z)?.codes)
    }

    /// Codes to waveform of `frames * hop` samples.
    pub fn decode_codes(&self, codes: &TokenGrid) -> Result<Waveform> {
        let mut g = Graph::inference();
        let z = self.quantizer.dequantize_graph(&mut g, &self.store, codes)?;
        let y = self.decoder.forward(&mut g, &self.store, z)?;
        Ok(self.to_wave(g.value(y)))
    }

    /// Encode, quantize and decode.
    pub fn reconstruct(&self, wave: &Waveform) -> Result<Waveform> {
        self.check_input(wave)?;
        let mut g = Graph::inference();
        let x = g.constant(wave.to_tensor());
        let z = self.encoder.forward(&mut g, &self.store, x)?;
        let q = self.quantizer.quantize_graph(&mut g, &self.store, z, None)?;
        let y = self.decoder.forward(&mut g, &self.store, q.quantized)?;
        Ok(self.to_wave(g.value(y)))
    }

    fn to_wave(&self, y: &Tensor<T>) -> Waveform {
        Waveform::new(y.data().iter().map(|v| v.as_f64() as f32).collect(), self.cfg.sample_rate)
    }
}
