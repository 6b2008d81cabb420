//! Parameterised layers shared by the codec, discriminators and LM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::{AttnMask, Conv2dSpec, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::{Error, Result};

pub const ROPE_BASE: f64 = 10_000.0;

fn add_param<T: Real>(store: &mut ParamStore<T>, name: String, t: Tensor<T>) -> Result<ParamId> {
    store.add(name, t)
}

/// Dense layer with `[out, in]` weights.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = add_param(
            store,
            format!("{name}.weight"),
            Tensor::randn(&[out_dim, in_dim], 1.0 / (in_dim as f64).sqrt(), rng),
        )?;
        let b = if bias {
            Some(add_param(store, format!("{name}.bias"), Tensor::zeros(&[out_dim]))?)
        } else {
            None
        };
        Ok(Self { w, b, in_dim, out_dim })
    }

    /// `x: [rows, in] -> [rows, out]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let y = g.matmul_nt(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_bias_last(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Weight-normalised 1-d convolution.
#[derive(Debug, Clone)]
pub struct WnConv1d {
    pub v: ParamId,
    pub gain: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

fn wn_init<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Result<(ParamId, ParamId)> {
    let v = Tensor::<T>::randn(shape, 1.0 / (fan_in as f64).sqrt(), rng);
    let inner = v.numel() / shape[0];
    let gains: Vec<T> = v
        .data()
        .chunks(inner)
        .map(|c| c.iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect();
    let gain = Tensor::new(&[shape[0]], gains)?;
    let v = add_param(store, format!("{name}.weight_v"), v)?;
    let g = add_param(store, format!("{name}.weight_g"), gain)?;
    Ok((v, g))
}

impl WnConv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (v, gain) = wn_init(store, name, &[cout, cin, kernel], cin * kernel, rng)?;
        let b = add_param(store, format!("{name}.bias"), Tensor::zeros(&[cout]))?;
        Ok(Self { v, gain, b, stride, dilation, padding })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (v, gain, b) = (g.param(store, self.v), g.param(store, self.gain), g.param(store, self.b));
        let w = g.weight_norm(v, gain)?;
        g.conv1d(x, w, Some(b), self.stride, self.dilation, self.padding)
    }
}

/// Weight-normalised transposed 1-d convolution (`[cin, cout, k]` weights).
#[derive(Debug, Clone)]
pub struct WnConvTranspose1d {
    pub v: ParamId,
    pub gain: ParamId,
    pub b: ParamId,
    pub stride: usize,
}

impl WnConvTranspose1d {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (v, gain) = wn_init(store, name, &[cin, cout, kernel], cin * kernel / stride.max(1), rng)?;
        let b = add_param(store, format!("{name}.bias"), Tensor::zeros(&[cout]))?;
        Ok(Self { v, gain, b, stride })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (v, gain, b) = (g.param(store, self.v), g.param(store, self.gain), g.param(store, self.b));
        let w = g.weight_norm(v, gain)?;
        g.conv_transpose1d(x, w, Some(b), self.stride, 0)
    }
}

/// Weight-normalised 2-d convolution.
#[derive(Debug, Clone)]
pub struct WnConv2d {
    pub v: ParamId,
    pub gain: ParamId,
    pub b: ParamId,
    pub spec: Conv2dSpec,
}

impl WnConv2d {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        spec: Conv2dSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let (v, gain) = wn_init(store, name, &[cout, cin, kernel.0, kernel.1], cin * kernel.0 * kernel.1, rng)?;
        let b = add_param(store, format!("{name}.bias"), Tensor::zeros(&[cout]))?;
        Ok(Self { v, gain, b, spec })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (v, gain, b) = (g.param(store, self.v), g.param(store, self.gain), g.param(store, self.b));
        let w = g.weight_norm(v, gain)?;
        g.conv2d(x, w, Some(b), self.spec)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gamma = add_param(store, format!("{name}.gamma"), Tensor::full(&[dim], T::one()))?;
        let beta = add_param(store, format!("{name}.beta"), Tensor::zeros(&[dim]))?;
        Ok(Self { gamma, beta })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let (ga, be) = (g.param(store, self.gamma), g.param(store, self.beta));
        g.layer_norm(x, ga, be, 1e-5)
    }
}

/// Size of a pre-norm Transformer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub mlp: usize,
}

impl TransformerConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.heads == 0 || self.hidden == 0 || self.mlp == 0 {
            return Err(Error::Config(format!("{what}: transformer dims must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "{what}: hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        let dh = self.hidden / self.heads;
        if dh < 2 || dh % 2 != 0 {
            return Err(Error::Config(format!("{what}: head dim {dh} must be even and >= 2")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// Per-layer RoPE-rotated keys and values of already processed positions,
/// each `[heads, len, head_dim]`.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    keys: Vec<Option<Tensor<T>>>,
    values: Vec<Option<Tensor<T>>>,
    len: usize,
}

impl<T: Real> KvCache<T> {
    pub fn new(layers: usize) -> Self {
        Self { keys: vec![None; layers], values: vec![None; layers], len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Pre-norm Transformer with RoPE self-attention and a GELU MLP.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub cfg: TransformerConfig,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
}

impl Transformer {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: TransformerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate(name)?;
        let d = cfg.hidden;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            let p = format!("{name}.layers.{i}");
            blocks.push(Block {
                ln1: LayerNorm::new(store, &format!("{p}.ln1"), d)?,
                wq: Linear::new(store, &format!("{p}.attn.q"), d, d, false, rng)?,
                wk: Linear::new(store, &format!("{p}.attn.k"), d, d, false, rng)?,
                wv: Linear::new(store, &format!("{p}.attn.v"), d, d, false, rng)?,
                wo: Linear::new(store, &format!("{p}.attn.o"), d, d, false, rng)?,
                ln2: LayerNorm::new(store, &format!("{p}.ln2"), d)?,
                fc1: Linear::new(store, &format!("{p}.mlp.fc1"), d, cfg.mlp, true, rng)?,
                fc2: Linear::new(store, &format!("{p}.mlp.fc2"), cfg.mlp, d, true, rng)?,
            });
        }
        let final_ln = LayerNorm::new(store, &format!("{name}.final_ln"), d)?;
        Ok(Self { cfg, blocks, final_ln })
    }

    /// Full-sequence forward of `batch` sequences stacked as `[batch*len, hidden]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        batch: usize,
        mask: AttnMask,
    ) -> Result<Var> {
        self.run(g, store, x, batch, mask, None)
    }

    /// Forward of new positions of a single sequence, attending to and then
    /// extending `cache`.
    pub fn forward_cached<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: AttnMask,
        cache: &mut KvCache<T>,
    ) -> Result<Var> {
        if cache.keys.len() != self.blocks.len() {
            return Err(Error::Usage("kv cache built for a different depth".into()));
        }
        let new = g.shape(x)[0];
        let y = self.run(g, store, x, 1, mask, Some(cache))?;
        cache.len += new;
        Ok(y)
    }

    fn run<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        mut x: Var,
        batch: usize,
        mask: AttnMask,
        mut cache: Option<&mut KvCache<T>>,
    ) -> Result<Var> {
        let heads = self.cfg.heads;
        let offset = cache.as_ref().map_or(0, |c| c.len);
        for (li, blk) in self.blocks.iter().enumerate() {
            let h = blk.ln1.forward(g, store, x)?;
            let q = blk.wq.forward(g, store, h)?;
            let k = blk.wk.forward(g, store, h)?;
            let v = blk.wv.forward(g, store, h)?;
            let q = g.split_heads(q, batch, heads)?;
            let k = g.split_heads(k, batch, heads)?;
            let v = g.split_heads(v, batch, heads)?;
            let q = g.rope(q, offset, ROPE_BASE)?;
            let mut k = g.rope(k, offset, ROPE_BASE)?;
            let mut v = v;
            if let Some(c) = cache.as_deref_mut() {
                if let (Some(pk), Some(pv)) = (c.keys[li].clone(), c.values[li].clone()) {
                    let pk = g.constant(pk);
                    let pv = g.constant(pv);
                    k = g.concat(&[pk, k], 1)?;
                    v = g.concat(&[pv, v], 1)?;
                }
                c.keys[li] = Some(g.value(k).clone());
                c.values[li] = Some(g.value(v).clone());
            }
            let a = g.attention(q, k, v, mask)?;
            let a = g.merge_heads(a, batch)?;
            let a = blk.wo.forward(g, store, a)?;
            x = g.add(x, a)?;
            let h = blk.ln2.forward(g, store, x)?;
            let h = blk.fc1.forward(g, store, h)?;
            let h = g.gelu(h);
            let h = blk.fc2.forward(g, store, h)?;
            x = g.add(x, h)?;
        }
        self.final_ln.forward(g, store, x)
    }
}
