use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::{Conv2dSpec, Graph, ParamStore, Real, Var};
use crate::nn::WnConv2d;
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.1;

/// Shape of the discriminator ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscConfig {
    pub mpd_periods: Vec<usize>,
    /// Output widths of the strided period convs; a stride-1 conv at the
    /// last width and a 1-channel head follow.
    pub mpd_channels: Vec<usize>,
    pub stft_ffts: Vec<usize>,
    pub stft_channels: usize,
}

impl DiscConfig {
    pub fn full() -> Self {
        Self {
            mpd_periods: vec![2, 3, 5, 7, 11],
            mpd_channels: vec![32, 128, 512, 1024],
            stft_ffts: vec![78, 126, 206, 334, 542, 876, 1418, 2296],
            stft_channels: 32,
        }
    }

    /// Same branches with narrow layers.
    pub fn desk() -> Self {
        Self { mpd_channels: vec![8, 16, 32, 32], stft_channels: 8, ..Self::full() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mpd_periods.contains(&0) || self.mpd_channels.is_empty() || self.mpd_channels.contains(&0) {
            return Err(Error::Config("MPD periods and widths must be positive".into()));
        }
        if self.stft_ffts.iter().any(|&n| n < 4) || self.stft_channels == 0 {
            return Err(Error::Config("MS-STFT sizes must be at least 4 and width positive".into()));
        }
        if self.mpd_periods.is_empty() && self.stft_ffts.is_empty() {
            return Err(Error::Config("discriminator set has no branches".into()));
        }
        Ok(())
    }

    /// Shortest input every branch accepts.
    pub fn min_len(&self) -> usize {
        self.stft_ffts.iter().copied().max().unwrap_or(1)
    }
}

/// One branch's final logit map and its intermediate activations.
#[derive(Debug, Clone)]
pub struct BranchOutput {
    pub logits: Var,
    pub features: Vec<Var>,
}

#[derive(Debug, Clone)]
struct PeriodBranch {
    period: usize,
    convs: Vec<WnConv2d>,
    head: WnConv2d,
}

impl PeriodBranch {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<BranchOutput> {
        let len = g.value(x).numel();
        let p = self.period;
        let x = g.pad_last(x, 0, len.div_ceil(p) * p - len);
        let mut h = g.reshape(x, &[1, len.div_ceil(p), p])?;
        let mut features = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            h = conv.forward(g, store, h)?;
            h = g.leaky_relu(h, LEAKY_SLOPE);
            features.push(h);
        }
        let logits = self.head.forward(g, store, h)?;
        Ok(BranchOutput { logits, features })
    }
}

#[derive(Debug, Clone)]
struct StftBranch {
    n_fft: usize,
    convs: Vec<WnConv2d>,
    head: WnConv2d,
}

impl StftBranch {
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<BranchOutput> {
        // [2, frames, bins]: real and imaginary planes as channels
        let mut h = g.stft(x, self.n_fft, (self.n_fft / 4).max(1))?;
        let mut features = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            h = conv.forward(g, store, h)?;
            h = g.leaky_relu(h, LEAKY_SLOPE);
            features.push(h);
        }
        let logits = self.head.forward(g, store, h)?;
        Ok(BranchOutput { logits, features })
    }
}

/// Multi-period and multi-resolution STFT discriminators.
#[derive(Debug, Clone)]
pub struct DiscriminatorSet {
    pub cfg: DiscConfig,
    periods: Vec<PeriodBranch>,
    stfts: Vec<StftBranch>,
}

impl DiscriminatorSet {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, cfg: DiscConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut periods = Vec::new();
        for &p in &cfg.mpd_periods {
            let name = format!("mpd.p{p}");
            let mut convs = Vec::new();
            let mut cin = 1;
            let strided = Conv2dSpec { stride: (3, 1), padding: (2, 0), ..Default::default() };
            for (i, &c) in cfg.mpd_channels.iter().enumerate() {
                convs.push(WnConv2d::new(store, &format!("{name}.conv{i}"), cin, c, (5, 1), strided, rng)?);
                cin = c;
            }
            let flat = Conv2dSpec { padding: (2, 0), ..Default::default() };
            convs.push(WnConv2d::new(store, &format!("{name}.conv{}", cfg.mpd_channels.len()), cin, cin, (5, 1), flat, rng)?);
            let head_spec = Conv2dSpec { padding: (1, 0), ..Default::default() };
            let head = WnConv2d::new(store, &format!("{name}.head"), cin, 1, (3, 1), head_spec, rng)?;
            periods.push(PeriodBranch { period: p, convs, head });
        }
        let mut stfts = Vec::new();
        let c = cfg.stft_channels;
        for &n in &cfg.stft_ffts {
            let name = format!("msstft.n{n}");
            let mut convs = vec![WnConv2d::new(
                store,
                &format!("{name}.conv0"),
                2,
                c,
                (3, 9),
                Conv2dSpec { padding: (1, 4), ..Default::default() },
                rng,
            )?];
            for (i, d) in [1, 2, 4].into_iter().enumerate() {
                let spec = Conv2dSpec { stride: (1, 2), dilation: (d, 1), padding: (d, 4) };
                convs.push(WnConv2d::new(store, &format!("{name}.conv{}", i + 1), c, c, (3, 9), spec, rng)?);
            }
            let sq = Conv2dSpec { padding: (1, 1), ..Default::default() };
            convs.push(WnConv2d::new(store, &format!("{name}.conv4"), c, c, (3, 3), sq, rng)?);
            let head = WnConv2d::new(store, &format!("{name}.head"), c, 1, (3, 3), sq, rng)?;
            stfts.push(StftBranch { n_fft: n, convs, head });
        }
        Ok(Self { cfg, periods, stfts })
    }

    pub fn n_branches(&self) -> usize {
        self.periods.len() + self.stfts.len()
    }

    /// Runs every branch on a waveform of any rank, period branches first.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Vec<BranchOutput>> {
        let n = g.value(x).numel();
        let x = g.reshape(x, &[n])?;
        let mut out = Vec::with_capacity(self.n_branches());
        for b in &self.periods {
            out.push(b.forward(g, store, x)?);
        }
        for b in &self.stfts {
            out.push(b.forward(g, store, x)?);
        }
        Ok(out)
    }
}
