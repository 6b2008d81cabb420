use serde::{Deserialize, Serialize};

use crate::kernels::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Resolutions of the multi-scale log-mel loss. The hop of each scale is a
/// quarter of its window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelConfig {
    pub windows: Vec<usize>,
    pub mel_bins: Vec<usize>,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    1e-5
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            windows: vec![32, 64, 128, 256, 512, 1024, 2048],
            mel_bins: vec![5, 10, 20, 40, 80, 160, 320],
            floor: default_floor(),
        }
    }
}

impl MelConfig {
    /// The first `n` scales of the default set.
    pub fn smallest(n: usize) -> Self {
        let d = Self::default();
        Self { windows: d.windows[..n].to_vec(), mel_bins: d.mel_bins[..n].to_vec(), floor: d.floor }
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() || self.windows.len() != self.mel_bins.len() {
            return Err(Error::Config(format!(
                "{} mel windows but {} bin counts",
                self.windows.len(),
                self.mel_bins.len()
            )));
        }
        for (&w, &m) in self.windows.iter().zip(&self.mel_bins) {
            if w < 4 || m == 0 || m >= w / 2 {
                return Err(Error::Config(format!("mel scale window {w} with {m} bins")));
            }
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config(format!("mel floor {} must be positive", self.floor)));
        }
        Ok(())
    }

    pub fn hop(window: usize) -> usize {
        (window / 4).max(1)
    }

    /// Shortest signal every scale can analyse.
    pub fn min_len(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(0)
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale from 0 Hz to Nyquist, unnormalised,
/// as an `[n_mels, n_fft / 2 + 1]` row-major matrix.
pub fn mel_filterbank(n_fft: usize, n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let bins = n_fft / 2 + 1;
    let sr = sample_rate as f64;
    let top = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let mut fb = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..bins {
            let f = b as f64 * sr / n_fft as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[m * bins + b] = w;
        }
    }
    fb
}

/// Precomputed filterbanks for one [`MelConfig`] and sample rate.
#[derive(Debug, Clone)]
pub struct MelLoss {
    cfg: MelConfig,
    banks: Vec<Vec<f64>>,
}

impl MelLoss {
    pub fn new(cfg: MelConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        let banks = cfg.windows.iter().zip(&cfg.mel_bins).map(|(&w, &m)| mel_filterbank(w, m, sample_rate)).collect();
        Ok(Self { cfg, banks })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// `[frames, n_mels]` log-mel features of scale `i` for a signal `[len]`.
    pub fn log_mel<T: Real>(&self, g: &mut Graph<T>, x: Var, i: usize) -> Result<Var> {
        let (w, m) = (self.cfg.windows[i], self.cfg.mel_bins[i]);
        let spec = g.stft(x, w, MelConfig::hop(w))?;
        let mag = g.complex_abs(spec)?;
        let fb = g.constant(Tensor::from_f64(&[m, w / 2 + 1], &self.banks[i])?);
        let mel = g.matmul_nt(mag, fb)?;
        Ok(g.log_clamp(mel, self.cfg.floor))
    }

    /// Mean over scales of the mean absolute log-mel difference. Both
    /// signals must have the same number of samples; any rank is accepted.
    pub fn loss<T: Real>(&self, g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
        let (nx, ny) = (g.value(x).numel(), g.value(y).numel());
        if nx != ny {
            return Err(Error::Usage(format!("mel loss of {nx} vs {ny} samples")));
        }
        let x = g.reshape(x, &[nx])?;
        let y = g.reshape(y, &[ny])?;
        let mut total: Option<Var> = None;
        for i in 0..self.cfg.windows.len() {
            let a = self.log_mel(g, x, i)?;
            let b = self.log_mel(g, y, i)?;
            let d = g.sub(a, b)?;
            let d = g.abs(d);
            let l = g.mean(d);
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        let total = total.expect("validated non-empty");
        Ok(g.scale(total, 1.0 / self.cfg.windows.len() as f64))
    }

    /// Loss value between two plain sample buffers.
    pub fn value(&self, x: &[f32], y: &[f32]) -> Result<f64> {
        let mut g = Graph::<f64>::inference();
        let xv = g.constant(Tensor::new(&[x.len()], x.iter().map(|&v| v as f64).collect())?);
        let yv = g.constant(Tensor::new(&[y.len()], y.iter().map(|&v| v as f64).collect())?);
        let l = self.loss(&mut g, xv, yv)?;
        g.value(l).item()
    }
}
