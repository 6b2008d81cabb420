use std::sync::Arc;

use crate::kernels::{par, Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Which keys a query may attend to. Queries are aligned to the end of the
/// key sequence, so a single query against a cache sees every cached key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnMask {
    None,
    Causal,
    /// Causal, and queries at or after `text_len` cannot see keys before it.
    CausalTextBlocked { text_len: usize },
}

impl AttnMask {
    fn allowed(self, i: usize, j: usize, lq: usize, lk: usize) -> bool {
        if self == AttnMask::None {
            return true;
        }
        let qpos = i + lk - lq;
        match self {
            AttnMask::None => true,
            AttnMask::Causal => j <= qpos,
            AttnMask::CausalTextBlocked { text_len } => j <= qpos && !(qpos >= text_len && j < text_len),
        }
    }
}

impl<T: Real> Graph<T> {
    /// Softmax over the last axis. Masked entries get probability exactly zero.
    pub fn softmax_masked(&mut self, x: Var, mask: AttnMask) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let n = *s.last().ok_or_else(|| Error::shape("softmax of a rank-0 tensor"))?;
        let lq = if s.len() >= 2 { s[s.len() - 2] } else { 1 };
        if mask != AttnMask::None && lq > n {
            return Err(Error::shape(format!("mask needs queries <= keys, got {s:?}")));
        }
        let mut p = self.value(x).data().to_vec();
        par::chunks_mut(&mut p, n, |r, row| {
            let i = r % lq;
            let mut max = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if mask.allowed(i, j, lq, n) && v > max {
                    max = v;
                }
            }
            let mut total = T::zero();
            for (j, v) in row.iter_mut().enumerate() {
                *v = if mask.allowed(i, j, lq, n) { (*v - max).exp() } else { T::zero() };
                total += *v;
            }
            if total > T::zero() {
                row.iter_mut().for_each(|v| *v /= total);
            }
        });
        Ok(self.push(
            Tensor::from_parts(s, p),
            &[x],
            Box::new(move |_, out, g| {
                let mut gx = g.data().to_vec();
                par::chunks_mut(&mut gx, n, |r, row| {
                    let prow = &out.data()[r * n..(r + 1) * n];
                    let dot: T = row.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                    for (gv, &pv) in row.iter_mut().zip(prow) {
                        *gv = pv * (*gv - dot);
                    }
                });
                vec![Some(Tensor::from_parts(g.shape().to_vec(), gx))]
            }),
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_masked(x, AttnMask::None)
    }

    /// Row-wise layer norm of `x: [rows, n]` with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let n = *s.last().ok_or_else(|| Error::shape("layer_norm of a rank-0 tensor"))?;
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(Error::shape(format!("layer_norm affine for width {n}")));
        }
        let eps = T::from_f64(eps);
        let nf = T::from_usize(n);
        let stats = move |row: &[T]| {
            let mu = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / nf;
            (mu, T::one() / (var + eps).sqrt())
        };
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut y = self.value(x).data().to_vec();
        par::chunks_mut(&mut y, n, |_, row| {
            let (mu, rstd) = stats(row);
            for ((v, &ga), &be) in row.iter_mut().zip(gd).zip(bd) {
                *v = (*v - mu) * rstd * ga + be;
            }
        });
        Ok(self.push(
            Tensor::from_parts(s.clone(), y),
            &[x, gamma, beta],
            Box::new(move |ins, _, g| {
                let (xd, gam) = (ins[0].data(), ins[1].data());
                let mut ggamma = vec![T::zero(); n];
                let mut gbeta = vec![T::zero(); n];
                let mut gx = vec![T::zero(); xd.len()];
                for ((xrow, grow), gxrow) in xd.chunks(n).zip(g.data().chunks(n)).zip(gx.chunks_mut(n)) {
                    let (mu, rstd) = stats(xrow);
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..n {
                        let xhat = (xrow[j] - mu) * rstd;
                        ggamma[j] += grow[j] * xhat;
                        gbeta[j] += grow[j];
                        let gh = grow[j] * gam[j];
                        m1 += gh;
                        m2 += gh * xhat;
                    }
                    m1 /= nf;
                    m2 /= nf;
                    for j in 0..n {
                        let xhat = (xrow[j] - mu) * rstd;
                        gxrow[j] = rstd * (grow[j] * gam[j] - m1 - xhat * m2);
                    }
                }
                vec![
                    Some(Tensor::from_parts(s.clone(), gx)),
                    Some(Tensor::from_parts(vec![n], ggamma)),
                    Some(Tensor::from_parts(vec![n], gbeta)),
                ]
            }),
        ))
    }

    /// Sum over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        let v = *s.last().ok_or_else(|| Error::shape("cross_entropy of a rank-0 tensor"))?;
        let rows = self.value(logits).numel() / v.max(1);
        if rows != targets.len() {
            return Err(Error::shape(format!("{rows} logit rows for {} targets", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index { index: t, size: v });
        }
        let ld = self.value(logits).data();
        let mut probs = vec![T::zero(); ld.len()];
        let mut total = T::zero();
        for ((row, prow), &t) in ld.chunks(v).zip(probs.chunks_mut(v)).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &x) in prow.iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            prow.iter_mut().for_each(|p| *p /= z);
            total += z.ln() + max - row[t];
        }
        let targets: Arc<Vec<usize>> = Arc::new(targets.to_vec());
        Ok(self.push(
            Tensor::scalar(total),
            &[logits],
            Box::new(move |_, _, g| {
                let gv = g.data()[0];
                let mut gx = probs.clone();
                for (row, &t) in gx.chunks_mut(v).zip(targets.iter()) {
                    row[t] -= T::one();
                    row.iter_mut().for_each(|x| *x *= gv);
                }
                vec![Some(Tensor::from_parts(s.clone(), gx))]
            }),
        ))
    }

    /// Mean cross-entropy over rows.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.cross_entropy_sum(logits, targets)?;
        Ok(self.scale(s, 1.0 / targets.len().max(1) as f64))
    }

    /// Rotary position embedding on `x: [batch, len, dim]`, rotating pairs
    /// `(2i, 2i+1)` by `(offset + t) * base^(-2i/dim)`.
    pub fn rope(&mut self, x: Var, offset: usize, base: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[2] < 2 || s[2] % 2 != 0 {
            return Err(Error::Config(format!("rope needs [batch, len, even dim >= 2], got {s:?}")));
        }
        let (len, dim) = (s[1], s[2]);
        let half = dim / 2;
        let table: Arc<Vec<(T, T)>> = Arc::new(
            (0..len)
                .flat_map(|t| {
                    (0..half).map(move |i| {
                        let theta = base.powf(-2.0 * i as f64 / dim as f64);
                        let a = (offset + t) as f64 * theta;
                        (T::from_f64(a.cos()), T::from_f64(a.sin()))
                    })
                })
                .collect(),
        );
        let rotate = move |data: &[T], table: &[(T, T)], sign: T| {
            let mut out = data.to_vec();
            for (r, row) in out.chunks_mut(dim).enumerate() {
                let t = r % len;
                for i in 0..half {
                    let (c, sn) = table[t * half + i];
                    let sn = sn * sign;
                    let (a, b) = (row[2 * i], row[2 * i + 1]);
                    row[2 * i] = a * c - b * sn;
                    row[2 * i + 1] = a * sn + b * c;
                }
            }
            out
        };
        let y = rotate(self.value(x).data(), &table, T::one());
        Ok(self.push(
            Tensor::from_parts(s.clone(), y),
            &[x],
            Box::new(move |_, _, g| vec![Some(Tensor::from_parts(s.clone(), rotate(g.data(), &table, -T::one())))]),
        ))
    }

    /// Scaled dot-product attention over `[heads, len, dh]` inputs (no RoPE).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: AttnMask) -> Result<Var> {
        let dh = self.shape(q)[2];
        let scores = self.bmm_nt(q, k)?;
        let scores = self.scale(scores, 1.0 / (dh as f64).sqrt());
        let p = self.softmax_masked(scores, mask)?;
        self.bmm(p, v)
    }

    /// Attention with RoPE (base 10000) applied to queries and keys at
    /// positions `0..len`.
    pub fn rope_attention(&mut self, q: Var, k: Var, v: Var, causal: bool) -> Result<Var> {
        let q = self.rope(q, 0, 10_000.0)?;
        let k = self.rope(k, 0, 10_000.0)?;
        let mask = if causal { AttnMask::Causal } else { AttnMask::None };
        self.attention(q, k, v, mask)
    }
}
