//! Factorized residual vector quantization.
//!
//! Each layer projects the running residual from the latent space (`D`) down
//! to a small lookup space (`d`), picks the codebook row with the highest
//! cosine similarity, and projects that row back up. Residuals stay in the
//! latent space, so the quantized latent is exactly the sum of the per-layer
//! contributions.
//!
//! Projection weights are stored in `[out, in]` orientation: `in_proj` is
//! `[d, D]` and `out_proj` is `[D, d]`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bitstream::TokenGrid;
use crate::kernels::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::{Error, Result};

/// Norm below which a vector counts as zero.
pub const DEGENERATE_NORM: f64 = 1e-8;

/// Cosine-similarity lookup. Ties go to the lowest index and a near-zero
/// query selects index 0. Returns the raw codebook row.
pub fn lookup<'a, T: Real>(p: &[T], codebook: &'a Tensor<T>) -> (usize, &'a [T]) {
    let idx = lookup_index(p, codebook, &row_norms(codebook));
    (idx, codebook.row(idx))
}

fn row_norms<T: Real>(codebook: &Tensor<T>) -> Vec<f64> {
    (0..codebook.dim(0))
        .map(|j| codebook.row(j).iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt())
        .collect()
}

fn lookup_index<T: Real>(p: &[T], codebook: &Tensor<T>, norms: &[f64]) -> usize {
    let pnorm = p.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    if pnorm < DEGENERATE_NORM {
        return 0;
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (j, &cn) in norms.iter().enumerate() {
        if cn < DEGENERATE_NORM {
            continue;
        }
        let dot: f64 = p.iter().zip(codebook.row(j)).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
        let score = dot / (pnorm * cn);
        if score > best_score {
            best = j;
            best_score = score;
        }
    }
    best
}

/// One quantizer layer's parameters.
#[derive(Debug, Clone)]
pub struct QuantizerLayer {
    pub in_proj: ParamId,
    pub codebook: ParamId,
    pub out_proj: ParamId,
}

impl QuantizerLayer {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        latent_dim: usize,
        proj_dim: usize,
        codebook_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let in_proj = store.add(
            format!("{name}.in_proj"),
            Tensor::randn(&[proj_dim, latent_dim], 1.0 / (latent_dim as f64).sqrt(), rng),
        )?;
        let rows: Vec<T> = (0..codebook_size).flat_map(|_| unit_row(proj_dim, rng)).collect();
        let codebook = store.add(format!("{name}.codebook"), Tensor::new(&[codebook_size, proj_dim], rows)?)?;
        let out_proj = store.add(
            format!("{name}.out_proj"),
            Tensor::randn(&[latent_dim, proj_dim], 1.0 / (proj_dim as f64).sqrt(), rng),
        )?;
        Ok(Self { in_proj, codebook, out_proj })
    }

    /// Builds a layer from explicit matrices (`in_proj [d, D]`, `codebook
    /// [C, d]`, `out_proj [D, d]`).
    pub fn from_tensors<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_proj: Tensor<T>,
        codebook: Tensor<T>,
        out_proj: Tensor<T>,
    ) -> Result<Self> {
        let (d, dd) = (in_proj.dim(0), in_proj.dim(1));
        if in_proj.rank() != 2 || codebook.rank() != 2 || out_proj.rank() != 2 || codebook.dim(1) != d || out_proj.shape() != [dd, d] {
            return Err(Error::Config(format!(
                "quantizer layer shapes in_proj {:?}, codebook {:?}, out_proj {:?}",
                in_proj.shape(),
                codebook.shape(),
                out_proj.shape()
            )));
        }
        Ok(Self {
            in_proj: store.add(format!("{name}.in_proj"), in_proj)?,
            codebook: store.add(format!("{name}.codebook"), codebook)?,
            out_proj: store.add(format!("{name}.out_proj"), out_proj)?,
        })
    }

    pub fn codebook_size<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.value(self.codebook).dim(0)
    }

    /// Replaces codebook rows whose norm fell below [`DEGENERATE_NORM`].
    /// Returns how many rows were replaced.
    pub fn reinit_degenerate_rows<T: Real, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) -> usize {
        let cb = store.value_mut(self.codebook);
        let d = cb.dim(1);
        let mut replaced = 0;
        for row in cb.data_mut().chunks_mut(d) {
            let n = row.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
            if n < DEGENERATE_NORM {
                row.copy_from_slice(&unit_row::<T, R>(d, rng));
                replaced += 1;
            }
        }
        replaced
    }
}

fn unit_row<T: Real, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<T> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > DEGENERATE_NORM {
            return v.iter().map(|x| T::from_f64(x / n)).collect();
        }
    }
}

/// Result of [`Frvq::quantize_graph`].
#[derive(Debug, Clone)]
pub struct QuantOutput {
    pub codes: TokenGrid,
    /// `[frames, D]` sum of layer contributions.
    pub quantized: Var,
    /// Per-layer projected residuals `p`, `[frames, d]`.
    pub projected: Vec<Var>,
    /// Per-layer selected code rows `c*`, `[frames, d]`.
    pub selected: Vec<Var>,
    /// Per-layer contributions, `[frames, D]`.
    pub contributions: Vec<Var>,
}

/// Inference-side quantization result.
#[derive(Debug, Clone)]
pub struct QuantizationResult<T> {
    pub codes: TokenGrid,
    pub quantized: Tensor<T>,
    pub projected: Vec<Tensor<T>>,
    pub selected: Vec<Tensor<T>>,
}

/// Stack of quantizer layers.
#[derive(Debug, Clone)]
pub struct Frvq {
    pub layers: Vec<QuantizerLayer>,
    pub latent_dim: usize,
    pub codebook_size: usize,
}

impl Frvq {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        n_layers: usize,
        latent_dim: usize,
        proj_dim: usize,
        codebook_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_layers == 0 || codebook_size == 0 {
            return Err(Error::Config("quantizer needs at least one layer and one code".into()));
        }
        let layers = (0..n_layers)
            .map(|i| QuantizerLayer::new(store, &format!("quantizer.{i}"), latent_dim, proj_dim, codebook_size, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, latent_dim, codebook_size })
    }

    pub fn from_layers<T: Real>(store: &ParamStore<T>, layers: Vec<QuantizerLayer>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::Config("quantizer needs at least one layer".into()))?;
        let latent_dim = store.value(first.out_proj).dim(0);
        let codebook_size = first.codebook_size(store);
        if layers.iter().any(|l| l.codebook_size(store) != codebook_size || store.value(l.out_proj).dim(0) != latent_dim) {
            return Err(Error::Config("quantizer layers disagree on dims".into()));
        }
        Ok(Self { layers, latent_dim, codebook_size })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Residual cascade over `z: [frames, D]`.
    ///
    /// Each layer's low-dimensional value is `straight_through(p, c*)`: it
    /// equals `c*` exactly while gradients flow to `p`. With `forced` codes
    /// the lookup is skipped and the given indices are used.
    pub fn quantize_graph<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        z: Var,
        forced: Option<&TokenGrid>,
    ) -> Result<QuantOutput> {
        let s = g.shape(z).to_vec();
        if s.len() != 2 || s[1] != self.latent_dim {
            return Err(Error::Config(format!("quantizer expects [frames, {}], got {s:?}", self.latent_dim)));
        }
        let frames = s[0];
        if let Some(f) = forced {
            if f.frames() != frames || f.layers() != self.layers.len() {
                return Err(Error::shape(format!(
                    "forced codes {}x{} for {frames} frames and {} layers",
                    f.frames(),
                    f.layers(),
                    self.layers.len()
                )));
            }
        }
        let mut codes = TokenGrid::zeros(frames, self.layers.len());
        let mut residual = z;
        let mut total: Option<Var> = None;
        let mut out = QuantOutput {
            codes: TokenGrid::empty(self.layers.len()),
            quantized: z,
            projected: Vec::new(),
            selected: Vec::new(),
            contributions: Vec::new(),
        };
        for (li, layer) in self.layers.iter().enumerate() {
            let w_in = g.param(store, layer.in_proj);
            let cb = g.param(store, layer.codebook);
            let w_out = g.param(store, layer.out_proj);
            let p = g.matmul_nt(residual, w_in)?;
            let ids: Vec<usize> = match forced {
                Some(f) => {
                    let ids: Vec<usize> = f.layer_codes(li).iter().map(|&c| c as usize).collect();
                    if let Some(&bad) = ids.iter().find(|&&c| c >= self.codebook_size) {
                        return Err(Error::CorruptStream(format!("code {bad} out of range {}", self.codebook_size)));
                    }
                    ids
                }
                None => {
                    let cbt = g.value(cb);
                    let norms = row_norms(cbt);
                    let pv = g.value(p);
                    (0..frames).map(|t| lookup_index(pv.row(t), cbt, &norms)).collect()
                }
            };
            for (t, &c) in ids.iter().enumerate() {
                codes.set(t, li, c as u32);
            }
            let cstar = g.index_rows(cb, &ids)?;
            let st = g.straight_through(p, cstar)?;
            let q = g.matmul_nt(st, w_out)?;
            residual = g.sub(residual, q)?;
            total = Some(match total {
                Some(acc) => g.add(acc, q)?,
                None => q,
            });
            out.projected.push(p);
            out.selected.push(cstar);
            out.contributions.push(q);
        }
        out.codes = codes;
        out.quantized = total.expect("at least one layer");
        Ok(out)
    }

    /// Inference quantization of `z: [frames, D]`.
    pub fn quantize<T: Real>(&self, store: &ParamStore<T>, z: &Tensor<T>) -> Result<QuantizationResult<T>> {
        let mut g = Graph::inference();
        let zv = g.constant(z.clone());
        let out = self.quantize_graph(&mut g, store, zv, None)?;
        Ok(QuantizationResult {
            codes: out.codes,
            quantized: g.value(out.quantized).clone(),
            projected: out.projected.iter().map(|&v| g.value(v).clone()).collect(),
            selected: out.selected.iter().map(|&v| g.value(v).clone()).collect(),
        })
    }

    /// `sum_i out_proj_i(codebook_i[code_i])` on the graph.
    pub fn dequantize_graph<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, codes: &TokenGrid) -> Result<Var> {
        if codes.layers() != self.layers.len() {
            return Err(Error::CorruptStream(format!(
                "{} code layers for a {}-layer quantizer",
                codes.layers(),
                self.layers.len()
            )));
        }
        codes.check_bounds(self.codebook_size)?;
        let mut total: Option<Var> = None;
        for (li, layer) in self.layers.iter().enumerate() {
            let cb = g.param(store, layer.codebook);
            let w_out = g.param(store, layer.out_proj);
            let ids: Vec<usize> = codes.layer_codes(li).iter().map(|&c| c as usize).collect();
            let c = g.index_rows(cb, &ids)?;
            let q = g.matmul_nt(c, w_out)?;
            total = Some(match total {
                Some(acc) => g.add(acc, q)?,
                None => q,
            });
        }
        Ok(total.expect("at least one layer"))
    }

    pub fn dequantize<T: Real>(&self, store: &ParamStore<T>, codes: &TokenGrid) -> Result<Tensor<T>> {
        let mut g = Graph::inference();
        let v = self.dequantize_graph(&mut g, store, codes)?;
        Ok(g.value(v).clone())
    }

    pub fn reinit_degenerate_rows<T: Real, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) -> usize {
        self.layers.iter().map(|l| l.reinit_degenerate_rows(store, rng)).sum()
    }
}

/// Code histogram of one layer and the perplexity `exp(H)` of its empirical
/// distribution.
pub fn codebook_usage(codes: &TokenGrid, layer: usize, codebook_size: usize) -> Result<(Vec<usize>, f64)> {
    if layer >= codes.layers() {
        return Err(Error::Index { index: layer, size: codes.layers() });
    }
    codes.check_bounds(codebook_size)?;
    let mut hist = vec![0usize; codebook_size];
    for c in codes.layer_codes(layer) {
        hist[c as usize] += 1;
    }
    let total = codes.frames() as f64;
    if total == 0.0 {
        return Ok((hist, 1.0));
    }
    let entropy: f64 = hist
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok((hist, entropy.exp()))
}
