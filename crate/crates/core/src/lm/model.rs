use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use super::config::{LmConfig, BOS_ID, TEXT_VOCAB};
use super::sample::sample_top_k;
use crate::bitstream::TokenGrid;
use crate::kernels::{AttnMask, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::nn::{KvCache, Linear, Transformer};
use crate::{Error, Result};

/// Positions processed by the global Transformer since the last reset.
#[derive(Debug, Default)]
pub struct PositionCounter {
    prefix: AtomicUsize,
    patches: AtomicUsize,
}

impl PositionCounter {
    fn add(&self, prefix: usize, patches: usize) {
        self.prefix.fetch_add(prefix, Ordering::Relaxed);
        self.patches.fetch_add(patches, Ordering::Relaxed);
    }

    /// Text and BOS positions.
    pub fn prefix(&self) -> usize {
        self.prefix.load(Ordering::Relaxed)
    }

    /// Speech patch positions.
    pub fn patches(&self) -> usize {
        self.patches.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> usize {
        self.prefix() + self.patches()
    }

    pub fn reset(&self) {
        self.prefix.store(0, Ordering::Relaxed);
        self.patches.store(0, Ordering::Relaxed);
    }
}

/// Decoding settings of [`HierLm::synthesize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub max_frames: usize,
    pub k_top: usize,
    pub temperature: f64,
    /// Keep generating through EOS; only used to time fixed-length runs.
    pub ignore_eos: bool,
}

impl SynthOptions {
    pub fn from_config(cfg: &LmConfig) -> Self {
        Self { max_frames: cfg.max_frames, k_top: cfg.k_top, temperature: cfg.temperature, ignore_eos: false }
    }

    pub fn greedy(max_frames: usize) -> Self {
        Self { max_frames, k_top: 1, temperature: 1.0, ignore_eos: false }
    }
}

/// Global Transformer over frame patches and a local Transformer over the
/// codes within a frame.
///
/// The global sequence is `[text bytes.., BOS, patch_1, .., patch_T]`; the
/// hidden state at BOS predicts patch 1 and the state at patch `t` predicts
/// patch `t + 1` (or EOS). Within a patch the local model sees the projected
/// global state at position 0 followed by the embeddings of codes `1..k-1`.
pub struct HierLm<T> {
    pub cfg: LmConfig,
    pub store: ParamStore<T>,
    text_emb: ParamId,
    code_emb: Vec<ParamId>,
    global: Transformer,
    cond: Linear,
    local_emb: Vec<ParamId>,
    local: Transformer,
    heads: Vec<Linear>,
    counter: PositionCounter,
}

fn ids_of(codes: impl IntoIterator<Item = u32>) -> Vec<usize> {
    codes.into_iter().map(|c| c as usize).collect()
}

impl<T: Real> HierLm<T> {
    pub fn new<R: Rng>(cfg: LmConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (n, c) = (cfg.n_quantizers, cfg.codebook_size);
        let (dg, dl) = (cfg.global.hidden, cfg.local.hidden);
        let mut store = ParamStore::new();
        let std_g = 1.0 / (dg as f64).sqrt();
        let text_emb = store.add("global.text_emb", Tensor::randn(&[TEXT_VOCAB, dg], std_g, rng))?;
        let code_emb = (0..n)
            .map(|k| store.add(format!("global.code_emb.{k}"), Tensor::randn(&[c, dg], std_g / (n as f64).sqrt(), rng)))
            .collect::<Result<_>>()?;
        let global = Transformer::new(&mut store, "global", cfg.global, rng)?;
        let cond = Linear::new(&mut store, "local.cond", dg, dl, true, rng)?;
        // the layer-1 table also embeds EOS
        let local_emb = (1..n)
            .map(|k| {
                let rows = if k == 1 { c + 1 } else { c };
                store.add(format!("local.code_emb.{k}"), Tensor::randn(&[rows, dl], 1.0 / (dl as f64).sqrt(), rng))
            })
            .collect::<Result<_>>()?;
        let local = Transformer::new(&mut store, "local", cfg.local, rng)?;
        let heads = (0..n)
            .map(|k| Linear::new(&mut store, &format!("local.head.{k}"), dl, if k == 0 { c + 1 } else { c }, true, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            store,
            text_emb,
            code_emb,
            global,
            cond,
            local_emb,
            local,
            heads,
            counter: PositionCounter::default(),
        })
    }

    pub fn counter(&self) -> &PositionCounter {
        &self.counter
    }

    pub fn head(&self, k: usize) -> &Linear {
        &self.heads[k]
    }

    fn check_grid(&self, grid: &TokenGrid) -> Result<()> {
        if grid.layers() != self.cfg.n_quantizers {
            return Err(Error::Compatibility(format!(
                "grid has {} layers, model expects {}",
                grid.layers(),
                self.cfg.n_quantizers
            )));
        }
        Ok(())
    }

    /// `sum_k E_k[codes_k]` as a `[1, d]` row.
    pub fn embed_patch(&self, g: &mut Graph<T>, codes: &[u32]) -> Result<Var> {
        if codes.len() != self.cfg.n_quantizers {
            return Err(Error::Usage(format!("patch of {} codes, expected {}", codes.len(), self.cfg.n_quantizers)));
        }
        let grid = TokenGrid::new(1, codes.len(), codes.to_vec())?;
        self.embed_patches(g, &grid)
    }

    /// `[frames, d]` patch embeddings.
    fn embed_patches(&self, g: &mut Graph<T>, grid: &TokenGrid) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (k, &table) in self.code_emb.iter().enumerate() {
            let t = g.param(&self.store, table);
            let e = g.index_rows(t, &ids_of(grid.layer_codes(k)))?;
            acc = Some(match acc {
                Some(a) => g.add(a, e)?,
                None => e,
            });
        }
        Ok(acc.expect("N >= 1"))
    }

    fn embed_prefix(&self, g: &mut Graph<T>, text: &[u8]) -> Result<Var> {
        let mut ids: Vec<usize> = text.iter().map(|&b| b as usize).collect();
        ids.push(BOS_ID);
        let t = g.param(&self.store, self.text_emb);
        g.index_rows(t, &ids)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.cfg.max_len {
            return Err(Error::SequenceLength { len, max: self.cfg.max_len });
        }
        Ok(())
    }

    /// Global hidden states `[|text| + T + 1, d]` with the causal mask.
    pub fn global_forward(&self, g: &mut Graph<T>, text: &[u8], grid: &TokenGrid) -> Result<Var> {
        self.global_forward_masked(g, text, grid, AttnMask::Causal)
    }

    pub fn global_forward_masked(&self, g: &mut Graph<T>, text: &[u8], grid: &TokenGrid, mask: AttnMask) -> Result<Var> {
        self.check_grid(grid)?;
        self.check_len(text.len() + 1 + grid.frames())?;
        let prefix = self.embed_prefix(g, text)?;
        let x = if grid.frames() > 0 {
            let patches = self.embed_patches(g, grid)?;
            g.concat(&[prefix, patches], 0)?
        } else {
            prefix
        };
        self.counter.add(text.len() + 1, grid.frames());
        self.global.forward(g, &self.store, x, 1, mask)
    }

    /// Logits for code `partial.len() + 1` of a patch given the global state
    /// `h: [1, d]` and the codes already chosen in that patch.
    pub fn local_logits(&self, g: &mut Graph<T>, h: Var, partial: &[u32]) -> Result<Var> {
        let k = partial.len() + 1;
        if k > self.cfg.n_quantizers {
            return Err(Error::Usage(format!("layer {k} requested from a {}-layer model", self.cfg.n_quantizers)));
        }
        let mut rows = vec![self.cond.forward(g, &self.store, h)?];
        for (j, &c) in partial.iter().enumerate() {
            let t = g.param(&self.store, self.local_emb[j]);
            rows.push(g.index_rows(t, &[c as usize])?);
        }
        let x = g.concat(&rows, 0)?;
        let out = self.local.forward(g, &self.store, x, 1, AttnMask::Causal)?;
        let last = g.narrow(out, 0, k - 1, 1)?;
        self.heads[k - 1].forward(g, &self.store, last)
    }

    /// Teacher-forced mean cross-entropy over every speech token plus the
    /// final layer-1 EOS.
    pub fn sequence_nll(&self, g: &mut Graph<T>, text: &[u8], grid: &TokenGrid) -> Result<Var> {
        self.sequence_nll_masked(g, text, grid, AttnMask::Causal)
    }

    pub fn sequence_nll_masked(&self, g: &mut Graph<T>, text: &[u8], grid: &TokenGrid, mask: AttnMask) -> Result<Var> {
        grid.check_bounds(self.cfg.codebook_size)?;
        let h = self.global_forward_masked(g, text, grid, mask)?;
        let (n, frames) = (self.cfg.n_quantizers, grid.frames());
        let rows = frames + 1;
        let eos = self.cfg.eos_id() as u32;
        let target = |r: usize, k: usize| -> u32 {
            if r < frames {
                grid.get(r, k)
            } else if k == 0 {
                eos
            } else {
                0
            }
        };
        let hs = g.narrow(h, 0, text.len(), rows)?;
        let mut pieces = vec![self.cond.forward(g, &self.store, hs)?];
        for k in 1..n {
            let t = g.param(&self.store, self.local_emb[k - 1]);
            let ids: Vec<usize> = (0..rows).map(|r| target(r, k - 1) as usize).collect();
            pieces.push(g.index_rows(t, &ids)?);
        }
        let x = g.concat(&pieces, 1)?;
        let x = g.reshape(x, &[rows * n, self.cfg.local.hidden])?;
        let out = self.local.forward(g, &self.store, x, rows, AttnMask::Causal)?;
        let mut total: Option<Var> = None;
        for k in 0..n {
            let used = if k == 0 { rows } else { frames };
            if used == 0 {
                continue;
            }
            let sel: Vec<usize> = (0..used).map(|r| r * n + k).collect();
            let hk = g.index_rows(out, &sel)?;
            let logits = self.heads[k].forward(g, &self.store, hk)?;
            let targets: Vec<usize> = (0..used).map(|r| target(r, k) as usize).collect();
            let ce = g.cross_entropy_sum(logits, &targets)?;
            total = Some(match total {
                Some(a) => g.add(a, ce)?,
                None => ce,
            });
        }
        let total = total.expect("EOS term always present");
        Ok(g.scale(total, 1.0 / (frames * n + 1) as f64))
    }

    /// Draws one patch from the global state `h: [1, d]`; `None` means EOS.
    pub fn sample_patch<R: Rng + ?Sized>(
        &self,
        h: &Tensor<T>,
        k_top: usize,
        temperature: f64,
        ignore_eos: bool,
        rng: &mut R,
    ) -> Result<Option<Vec<u32>>> {
        let n = self.cfg.n_quantizers;
        let mut cache = KvCache::new(self.cfg.local.layers);
        let mut codes = Vec::with_capacity(n);
        for k in 0..n {
            let mut g = Graph::inference();
            let x = if k == 0 {
                let hv = g.constant(h.clone());
                self.cond.forward(&mut g, &self.store, hv)?
            } else {
                let t = g.param(&self.store, self.local_emb[k - 1]);
                g.index_rows(t, &[codes[k - 1] as usize])?
            };
            let out = self.local.forward_cached(&mut g, &self.store, x, AttnMask::Causal, &mut cache)?;
            let logits = self.heads[k].forward(&mut g, &self.store, out)?;
            let mut l = g.value(logits).to_f64_vec();
            if k == 0 && ignore_eos {
                l.truncate(self.cfg.codebook_size);
            }
            let c = sample_top_k(&l, k_top, temperature, rng)?;
            if k == 0 && c == self.cfg.eos_id() {
                return Ok(None);
            }
            codes.push(c as u32);
        }
        Ok(Some(codes))
    }

    /// Autoregressive generation with a cached global pass. `prompt` frames
    /// are fed as fixed patches and are not part of the output.
    pub fn synthesize<R: Rng + ?Sized>(
        &self,
        text: &[u8],
        prompt: Option<&TokenGrid>,
        opts: SynthOptions,
        rng: &mut R,
    ) -> Result<TokenGrid> {
        if opts.max_frames == 0 {
            return Err(Error::Usage("max_frames must be at least 1".into()));
        }
        if let Some(p) = prompt {
            self.check_grid(p)?;
            p.check_bounds(self.cfg.codebook_size)?;
        }
        let prompt_frames = prompt.map_or(0, |p| p.frames());
        self.check_len(text.len() + 1 + prompt_frames + opts.max_frames - 1)?;
        let mut cache = KvCache::new(self.cfg.global.layers);
        let mut g = Graph::inference();
        let mut x = self.embed_prefix(&mut g, text)?;
        if let Some(p) = prompt.filter(|p| p.frames() > 0) {
            let pe = self.embed_patches(&mut g, p)?;
            x = g.concat(&[x, pe], 0)?;
        }
        let out = self.global.forward_cached(&mut g, &self.store, x, AttnMask::Causal, &mut cache)?;
        self.counter.add(text.len() + 1, prompt_frames);
        let rows = g.shape(out)[0];
        let last = g.narrow(out, 0, rows - 1, 1)?;
        let mut h = g.value(last).clone();
        let mut grid = TokenGrid::empty(self.cfg.n_quantizers);
        while grid.frames() < opts.max_frames {
            let Some(patch) = self.sample_patch(&h, opts.k_top, opts.temperature, opts.ignore_eos, rng)? else {
                break;
            };
            grid.push_frame(&patch)?;
            if grid.frames() == opts.max_frames {
                break;
            }
            let mut g = Graph::inference();
            let e = self.embed_patch(&mut g, &patch)?;
            let out = self.global.forward_cached(&mut g, &self.store, e, AttnMask::Causal, &mut cache)?;
            self.counter.add(0, 1);
            h = g.value(out).clone();
        }
        Ok(grid)
    }
}
