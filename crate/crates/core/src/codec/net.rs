use rand::Rng;

use super::{CodecConfig, FrameRate};
use crate::kernels::{AttnMask, Graph, ParamStore, Real, Tensor, Var};
use crate::nn::{Linear, Transformer, WnConv1d, WnConvTranspose1d};
use crate::{Error, Result};

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_parts(vec![1, self.samples.len()], self.samples.iter().map(|&s| T::from_f64(s as f64)).collect())
    }
}

/// Encoder output: `[frames, latent_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence<T> {
    pub values: Tensor<T>,
    pub frame_rate: FrameRate,
}

impl<T: Real> LatentSequence<T> {
    pub fn frames(&self) -> usize {
        self.values.dim(0)
    }

    pub fn dim(&self) -> usize {
        self.values.dim(1)
    }
}

/// Right-pads with zeros to a multiple of `hop`; returns the original length.
pub fn pad_to_hop(wave: &Waveform, hop: usize) -> Result<(Waveform, usize)> {
    if wave.is_empty() {
        return Err(Error::Format("empty waveform".into()));
    }
    if hop == 0 {
        return Err(Error::Config("hop must be positive".into()));
    }
    let len = wave.len();
    let mut samples = wave.samples.clone();
    samples.resize(len.div_ceil(hop) * hop, 0.0);
    Ok((Waveform::new(samples, wave.sample_rate), len))
}

/// Dilated convolutions with a skip around each, all at one width.
#[derive(Debug, Clone)]
struct ResidualUnit {
    convs: Vec<WnConv1d>,
}

impl ResidualUnit {
    fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        kernel: usize,
        dilations: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let convs = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                WnConv1d::new(store, &format!("{name}.{i}"), width, width, kernel, 1, d, d * (kernel - 1) / 2, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { convs })
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mut x: Var) -> Result<Var> {
        for conv in &self.convs {
            let h = g.elu(x);
            let h = conv.forward(g, store, h)?;
            x = g.add(x, h)?;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
struct DownStage {
    res: ResidualUnit,
    conv: WnConv1d,
    stride: usize,
}

/// Intermediate encoder features kept for inspection.
#[derive(Debug, Clone, Copy)]
pub struct EncoderTaps {
    /// `[frames, hidden]` sequence entering the bottleneck.
    pub pre_bottleneck: Var,
    /// `[frames, hidden]` sequence leaving the bottleneck.
    pub post_bottleneck: Var,
    /// `[frames, latent_dim]` latents.
    pub latents: Var,
}

/// Strided conv stack, Transformer bottleneck, projection to latents.
#[derive(Debug, Clone)]
pub struct Encoder {
    input: WnConv1d,
    stages: Vec<DownStage>,
    to_hidden: WnConv1d,
    bottleneck: Option<Transformer>,
    to_latent: Linear,
}

impl Encoder {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, cfg: &CodecConfig, rng: &mut R) -> Result<Self> {
        let widths = cfg.encoder_widths();
        let k = cfg.residual_kernel;
        let input = WnConv1d::new(store, "encoder.input", 1, widths[0], k, 1, 1, k / 2, rng)?;
        let stages = cfg
            .strides
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                Ok(DownStage {
                    res: ResidualUnit::new(store, &format!("encoder.stage{i}.res"), widths[i], k, &cfg.dilations, rng)?,
                    conv: WnConv1d::new(store, &format!("encoder.stage{i}.down"), widths[i], widths[i + 1], 2 * s, s, 1, 0, rng)?,
                    stride: s,
                })
            })
            .collect::<Result<_>>()?;
        let hidden = cfg.bottleneck.hidden;
        let to_hidden = WnConv1d::new(store, "encoder.to_hidden", widths[cfg.strides.len()], hidden, 1, 1, 1, 0, rng)?;
        let bottleneck = if cfg.bottleneck.layers > 0 {
            Some(Transformer::new(store, "encoder.bottleneck", cfg.bottleneck, rng)?)
        } else {
            None
        };
        let to_latent = Linear::new(store, "encoder.to_latent", hidden, cfg.latent_dim, true, rng)?;
        Ok(Self { input, stages, to_hidden, bottleneck, to_latent })
    }

    /// `x: [1, samples]` to latents, exposing bottleneck inputs and outputs.
    pub fn forward_taps<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<EncoderTaps> {
        let mut h = self.input.forward(g, store, x)?;
        for st in &self.stages {
            h = st.res.forward(g, store, h)?;
            h = g.elu(h);
            // kernel 2s over s extra samples keeps exactly len/s outputs
            h = g.pad_last(h, st.stride / 2, st.stride - st.stride / 2);
            h = st.conv.forward(g, store, h)?;
        }
        let h = g.elu(h);
        let h = self.to_hidden.forward(g, store, h)?;
        let pre = g.transpose(h)?;
        let post = match &self.bottleneck {
            Some(tf) => tf.forward(g, store, pre, 1, AttnMask::None)?,
            None => pre,
        };
        let latents = self.to_latent.forward(g, store, post)?;
        Ok(EncoderTaps { pre_bottleneck: pre, post_bottleneck: post, latents })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.forward_taps(g, store, x)?.latents)
    }

    /// Runs only the bottleneck on a `[frames, hidden]` sequence.
    pub fn bottleneck<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, h: Var) -> Result<Var> {
        match &self.bottleneck {
            Some(tf) => tf.forward(g, store, h, 1, AttnMask::None),
            None => Ok(h),
        }
    }
}

#[derive(Debug, Clone)]
struct UpStage {
    conv: WnConvTranspose1d,
    res: ResidualUnit,
    stride: usize,
}

/// Mirror of the encoder: 1x1 expansion, transposed-conv upsampling, tanh.
#[derive(Debug, Clone)]
pub struct Decoder {
    latent_dim: usize,
    input: WnConv1d,
    stages: Vec<UpStage>,
    output: WnConv1d,
}

impl Decoder {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, cfg: &CodecConfig, rng: &mut R) -> Result<Self> {
        let widths = cfg.decoder_widths();
        let k = cfg.residual_kernel;
        let input = WnConv1d::new(store, "decoder.input", cfg.latent_dim, widths[0], 1, 1, 1, 0, rng)?;
        let stages = cfg
            .strides
            .iter()
            .rev()
            .enumerate()
            .map(|(i, &s)| {
                Ok(UpStage {
                    conv: WnConvTranspose1d::new(store, &format!("decoder.stage{i}.up"), widths[i], widths[i + 1], 2 * s, s, rng)?,
                    res: ResidualUnit::new(store, &format!("decoder.stage{i}.res"), widths[i + 1], k, &cfg.dilations, rng)?,
                    stride: s,
                })
            })
            .collect::<Result<_>>()?;
        let output = WnConv1d::new(store, "decoder.output", widths[cfg.strides.len()], 1, k, 1, 1, k / 2, rng)?;
        Ok(Self { latent_dim: cfg.latent_dim, input, stages, output })
    }

    /// `z: [frames, latent_dim]` to `[1, frames * hop]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z: Var) -> Result<Var> {
        let s = g.shape(z).to_vec();
        if s.len() != 2 || s[1] != self.latent_dim {
            return Err(Error::Config(format!("decoder expects [frames, {}] latents, got {s:?}", self.latent_dim)));
        }
        let zt = g.transpose(z)?;
        let mut h = self.input.forward(g, store, zt)?;
        for st in &self.stages {
            let len = g.shape(h)[1];
            h = g.elu(h);
            h = st.conv.forward(g, store, h)?;
            h = g.narrow(h, 1, st.stride / 2, len * st.stride)?;
            h = st.res.forward(g, store, h)?;
        }
        let h = g.elu(h);
        let h = self.output.forward(g, store, h)?;
        Ok(g.tanh(h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mini() -> (ParamStore<f64>, Encoder, Decoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cfg = CodecConfig::miniature();
        let enc = Encoder::new(&mut store, &cfg, &mut rng).unwrap();
        let dec = Decoder::new(&mut store, &cfg, &mut rng).unwrap();
        (store, enc, dec)
    }

    #[test]
    fn miniature_shapes() {
        let (store, enc, dec) = mini();
        for n in [4, 8, 12] {
            let mut g = Graph::inference();
            let x = g.constant(Tensor::zeros(&[1, n]));
            let z = enc.forward(&mut g, &store, x).unwrap();
            assert_eq!(g.shape(z), &[n / 4, 8]);
            let y = dec.forward(&mut g, &store, z).unwrap();
            assert_eq!(g.shape(y), &[1, n]);
        }
    }

    #[test]
    fn decoder_rejects_wrong_dim() {
        let (store, _, dec) = mini();
        let mut g = Graph::inference();
        let z = g.constant(Tensor::zeros(&[2, 5]));
        assert!(matches!(dec.forward(&mut g, &store, z), Err(Error::Config(_))));
    }

    #[test]
    fn pad_examples() {
        let w = |n| Waveform::new(vec![0.5; n], 16_000);
        assert_eq!(pad_to_hop(&w(3200), 3200).unwrap().0.len(), 3200);
        let (p, orig) = pad_to_hop(&w(1), 3200).unwrap();
        assert_eq!((p.len(), orig), (3200, 1));
        assert!(p.samples[1..].iter().all(|&s| s == 0.0));
        assert_eq!(pad_to_hop(&w(16_001), 3200).unwrap().0.len(), 19_200);
        assert!(matches!(pad_to_hop(&w(0), 3200), Err(Error::Format(_))));
    }
}
