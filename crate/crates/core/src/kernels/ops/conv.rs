use crate::kernels::{par, Graph, Real, Tensor, Var};
use crate::{Error, Result};

use super::{conv1d_out_len, conv_transpose1d_out_len};

/// Stride, dilation and symmetric padding of a 2-d convolution, as
/// `(rows, cols)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { stride: (1, 1), dilation: (1, 1), padding: (0, 0) }
    }
}

/// Range of output positions `t` with `0 <= t*stride + off < len`.
fn valid_range(off: isize, stride: usize, len: usize, out_len: usize) -> std::ops::Range<usize> {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let hi = (len as isize - 1 - off).div_euclid(s) + 1;
    let hi = hi.clamp(0, out_len as isize);
    let lo = lo.min(hi);
    lo as usize..hi as usize
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of `x: [cin, len]` with `w: [cout, cin, k]`, plus an
    /// optional `[cout]` bias.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 3 || sx[0] != sw[1] || stride == 0 || dilation == 0 || sw[2] == 0 {
            return Err(Error::Config(format!(
                "conv1d: input {sx:?}, weight {sw:?}, stride {stride}, dilation {dilation}"
            )));
        }
        let (cin, len, cout, k) = (sx[0], sx[1], sw[0], sw[2]);
        let out_len = conv1d_out_len(len, k, stride, dilation, padding)
            .ok_or_else(|| Error::InputTooShort(format!("conv1d input length {len} for kernel {k}, dilation {dilation}")))?;
        let offs: Vec<isize> = (0..k).map(|j| (j * dilation) as isize - padding as isize).collect();
        let ranges: Vec<_> = offs.iter().map(|&o| valid_range(o, stride, len, out_len)).collect();

        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut y = vec![T::zero(); cout * out_len];
        par::chunks_mut(&mut y, out_len, |co, yrow| {
            for ci in 0..cin {
                let xrow = &xd[ci * len..(ci + 1) * len];
                for j in 0..k {
                    let wv = wd[(co * cin + ci) * k + j];
                    let off = offs[j];
                    for t in ranges[j].clone() {
                        yrow[t] += wv * xrow[(t as isize * stride as isize + off) as usize];
                    }
                }
            }
        });
        let offs_b = offs.clone();
        let ranges_b = ranges.clone();
        let out = self.push(
            Tensor::from_parts(vec![cout, out_len], y),
            &[x, w],
            Box::new(move |ins, _, g| {
                let (xd, wd, gd) = (ins[0].data(), ins[1].data(), g.data());
                let mut gx = vec![T::zero(); cin * len];
                par::chunks_mut(&mut gx, len, |ci, gxrow| {
                    for co in 0..cout {
                        let grow = &gd[co * out_len..(co + 1) * out_len];
                        for j in 0..k {
                            let wv = wd[(co * cin + ci) * k + j];
                            let off = offs_b[j];
                            for t in ranges_b[j].clone() {
                                gxrow[(t as isize * stride as isize + off) as usize] += grow[t] * wv;
                            }
                        }
                    }
                });
                let mut gw = vec![T::zero(); cout * cin * k];
                par::chunks_mut(&mut gw, cin * k, |co, gwrow| {
                    let grow = &gd[co * out_len..(co + 1) * out_len];
                    for ci in 0..cin {
                        let xrow = &xd[ci * len..(ci + 1) * len];
                        for j in 0..k {
                            let off = offs_b[j];
                            let mut acc = T::zero();
                            for t in ranges_b[j].clone() {
                                acc += grow[t] * xrow[(t as isize * stride as isize + off) as usize];
                            }
                            gwrow[ci * k + j] = acc;
                        }
                    }
                });
                vec![
                    Some(Tensor::from_parts(vec![cin, len], gx)),
                    Some(Tensor::from_parts(vec![cout, cin, k], gw)),
                ]
            }),
        );
        match bias {
            Some(b) => self.add_bias_channel(out, b),
            None => Ok(out),
        }
    }

    /// Transposed convolution of `x: [cin, len]` with `w: [cin, cout, k]`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 3 || sx[0] != sw[0] || stride == 0 || sw[2] == 0 {
            return Err(Error::Config(format!(
                "conv_transpose1d: input {sx:?}, weight {sw:?}, stride {stride}"
            )));
        }
        let (cin, len, cout, k) = (sx[0], sx[1], sw[1], sw[2]);
        let out_len = conv_transpose1d_out_len(len, k, stride, padding)
            .ok_or_else(|| Error::InputTooShort(format!("conv_transpose1d input length {len}, padding {padding}")))?;
        // Output index of input m and tap j, if inside [0, out_len).
        let target = move |m: usize, j: usize| -> Option<usize> {
            let idx = (m * stride + j) as isize - padding as isize;
            (idx >= 0 && (idx as usize) < out_len).then_some(idx as usize)
        };
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut y = vec![T::zero(); cout * out_len];
        par::chunks_mut(&mut y, out_len, |co, yrow| {
            for ci in 0..cin {
                let xrow = &xd[ci * len..(ci + 1) * len];
                for j in 0..k {
                    let wv = wd[(ci * cout + co) * k + j];
                    for (m, &xv) in xrow.iter().enumerate() {
                        if let Some(n) = target(m, j) {
                            yrow[n] += xv * wv;
                        }
                    }
                }
            }
        });
        let out = self.push(
            Tensor::from_parts(vec![cout, out_len], y),
            &[x, w],
            Box::new(move |ins, _, g| {
                let (xd, wd, gd) = (ins[0].data(), ins[1].data(), g.data());
                let mut gx = vec![T::zero(); cin * len];
                par::chunks_mut(&mut gx, len, |ci, gxrow| {
                    for co in 0..cout {
                        let grow = &gd[co * out_len..(co + 1) * out_len];
                        for j in 0..k {
                            let wv = wd[(ci * cout + co) * k + j];
                            for (m, gxv) in gxrow.iter_mut().enumerate() {
                                if let Some(n) = target(m, j) {
                                    *gxv += grow[n] * wv;
                                }
                            }
                        }
                    }
                });
                let mut gw = vec![T::zero(); cin * cout * k];
                par::chunks_mut(&mut gw, cout * k, |ci, gwrow| {
                    let xrow = &xd[ci * len..(ci + 1) * len];
                    for co in 0..cout {
                        let grow = &gd[co * out_len..(co + 1) * out_len];
                        for j in 0..k {
                            let mut acc = T::zero();
                            for (m, &xv) in xrow.iter().enumerate() {
                                if let Some(n) = target(m, j) {
                                    acc += xv * grow[n];
                                }
                            }
                            gwrow[co * k + j] = acc;
                        }
                    }
                });
                vec![
                    Some(Tensor::from_parts(vec![cin, len], gx)),
                    Some(Tensor::from_parts(vec![cin, cout, k], gw)),
                ]
            }),
        );
        match bias {
            Some(b) => self.add_bias_channel(out, b),
            None => Ok(out),
        }
    }

    /// Cross-correlation of `x: [cin, h, w]` with `w: [cout, cin, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let Conv2dSpec { stride: (sh, sww), dilation: (dh, dw), padding: (ph, pw) } = spec;
        if sx.len() != 3 || sw.len() != 4 || sx[0] != sw[1] || sh == 0 || sww == 0 || dh == 0 || dw == 0 {
            return Err(Error::Config(format!("conv2d: input {sx:?}, weight {sw:?}, {spec:?}")));
        }
        let (cin, ih, iw) = (sx[0], sx[1], sx[2]);
        let (cout, kh, kw) = (sw[0], sw[2], sw[3]);
        let oh = conv1d_out_len(ih, kh, sh, dh, ph)
            .ok_or_else(|| Error::InputTooShort(format!("conv2d height {ih} for kernel {kh}")))?;
        let ow = conv1d_out_len(iw, kw, sww, dw, pw)
            .ok_or_else(|| Error::InputTooShort(format!("conv2d width {iw} for kernel {kw}")))?;
        let hoffs: Vec<isize> = (0..kh).map(|j| (j * dh) as isize - ph as isize).collect();
        let woffs: Vec<isize> = (0..kw).map(|j| (j * dw) as isize - pw as isize).collect();
        let hr: Vec<_> = hoffs.iter().map(|&o| valid_range(o, sh, ih, oh)).collect();
        let wr: Vec<_> = woffs.iter().map(|&o| valid_range(o, sww, iw, ow)).collect();
        let geom = std::sync::Arc::new((hoffs, woffs, hr, wr));

        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut y = vec![T::zero(); cout * oh * ow];
        {
            let (hoffs, woffs, hr, wr) = &*geom;
            par::chunks_mut(&mut y, oh * ow, |co, yc| {
                for ci in 0..cin {
                    let xc = &xd[ci * ih * iw..(ci + 1) * ih * iw];
                    for a in 0..kh {
                        for b in 0..kw {
                            let wv = wd[((co * cin + ci) * kh + a) * kw + b];
                            for r in hr[a].clone() {
                                let xr = (r as isize * sh as isize + hoffs[a]) as usize;
                                let xrow = &xc[xr * iw..(xr + 1) * iw];
                                let yrow = &mut yc[r * ow..(r + 1) * ow];
                                for c in wr[b].clone() {
                                    yrow[c] += wv * xrow[(c as isize * sww as isize + woffs[b]) as usize];
                                }
                            }
                        }
                    }
                }
            });
        }
        let out = self.push(
            Tensor::from_parts(vec![cout, oh, ow], y),
            &[x, w],
            Box::new(move |ins, _, g| {
                let (hoffs, woffs, hr, wr) = &*geom;
                let (xd, wd, gd) = (ins[0].data(), ins[1].data(), g.data());
                let mut gx = vec![T::zero(); cin * ih * iw];
                par::chunks_mut(&mut gx, ih * iw, |ci, gxc| {
                    for co in 0..cout {
                        let gc = &gd[co * oh * ow..(co + 1) * oh * ow];
                        for a in 0..kh {
                            for b in 0..kw {
                                let wv = wd[((co * cin + ci) * kh + a) * kw + b];
                                for r in hr[a].clone() {
                                    let xr = (r as isize * sh as isize + hoffs[a]) as usize;
                                    let grow = &gc[r * ow..(r + 1) * ow];
                                    let gxrow = &mut gxc[xr * iw..(xr + 1) * iw];
                                    for c in wr[b].clone() {
                                        gxrow[(c as isize * sww as isize + woffs[b]) as usize] += grow[c] * wv;
                                    }
                                }
                            }
                        }
                    }
                });
                let mut gw = vec![T::zero(); cout * cin * kh * kw];
                par::chunks_mut(&mut gw, cin * kh * kw, |co, gwc| {
                    let gc = &gd[co * oh * ow..(co + 1) * oh * ow];
                    for ci in 0..cin {
                        let xc = &xd[ci * ih * iw..(ci + 1) * ih * iw];
                        for a in 0..kh {
                            for b in 0..kw {
                                let mut acc = T::zero();
                                for r in hr[a].clone() {
                                    let xr = (r as isize * sh as isize + hoffs[a]) as usize;
                                    let xrow = &xc[xr * iw..(xr + 1) * iw];
                                    let grow = &gc[r * ow..(r + 1) * ow];
                                    for c in wr[b].clone() {
                                        acc += grow[c] * xrow[(c as isize * sww as isize + woffs[b]) as usize];
                                    }
                                }
                                gwc[(ci * kh + a) * kw + b] = acc;
                            }
                        }
                    }
                });
                vec![
                    Some(Tensor::from_parts(vec![cin, ih, iw], gx)),
                    Some(Tensor::from_parts(vec![cout, cin, kh, kw], gw)),
                ]
            }),
        );
        match bias {
            Some(b) => self.add_bias_channel(out, b),
            None => Ok(out),
        }
    }

    /// `w_c = g_c * v_c / |v_c|`, the norm taken over every non-leading axis.
    pub fn weight_norm(&mut self, v: Var, gain: Var) -> Result<Var> {
        let sv = self.shape(v).to_vec();
        let cout = sv[0];
        if self.shape(gain) != [cout] {
            return Err(Error::shape(format!("weight_norm gain {:?} for {sv:?}", self.shape(gain))));
        }
        let inner = self.value(v).numel() / cout.max(1);
        let vd = self.value(v).data();
        let norms: Vec<T> = vd.chunks(inner).map(|c| c.iter().map(|&x| x * x).sum::<T>().sqrt()).collect();
        if let Some(c) = norms.iter().position(|n| *n == T::zero()) {
            return Err(Error::NumericDegeneracy(format!("weight_norm: channel {c} has zero norm")));
        }
        let gd = self.value(gain).data();
        let mut w = Vec::with_capacity(vd.len());
        for (c, chunk) in vd.chunks(inner).enumerate() {
            let s = gd[c] / norms[c];
            w.extend(chunk.iter().map(|&x| x * s));
        }
        Ok(self.push(
            Tensor::from_parts(sv.clone(), w),
            &[v, gain],
            Box::new(move |ins, _, g| {
                let (vd, gd, gw) = (ins[0].data(), ins[1].data(), g.data());
                let mut gv = Vec::with_capacity(vd.len());
                let mut gg = Vec::with_capacity(cout);
                for c in 0..cout {
                    let vc = &vd[c * inner..(c + 1) * inner];
                    let gc = &gw[c * inner..(c + 1) * inner];
                    let n = norms[c];
                    let dot: T = vc.iter().zip(gc).map(|(&a, &b)| a * b).sum();
                    gg.push(dot / n);
                    let s = gd[c] / n;
                    let proj = dot / (n * n);
                    gv.extend(vc.iter().zip(gc).map(|(&a, &b)| s * (b - proj * a)));
                }
                vec![Some(Tensor::from_parts(sv.clone(), gv)), Some(Tensor::from_parts(vec![cout], gg))]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(x: &[f64], w: &[f64], stride: usize, pad: usize) -> Vec<f64> {
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::from_f64(&[1, x.len()], x).unwrap());
        let wv = g.constant(Tensor::from_f64(&[1, 1, w.len()], w).unwrap());
        let y = g.conv1d(xv, wv, None, stride, 1, pad).unwrap();
        g.value(y).to_f64_vec()
    }

    #[test]
    fn conv1d_examples() {
        assert_eq!(conv(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, -1.0], 1, 0), vec![-2.0, -2.0]);
        assert_eq!(conv(&[1.0, 2.0, 3.0, 4.0], &[1.0], 2, 0), vec![1.0, 3.0]);
    }

    #[test]
    fn conv1d_too_short_input() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2]));
        let w = g.constant(Tensor::zeros(&[1, 1, 3]));
        assert!(matches!(g.conv1d(x, w, None, 1, 1, 0), Err(Error::InputTooShort(_))));
        let w2 = g.constant(Tensor::zeros(&[1, 2, 1]));
        assert!(matches!(g.conv1d(x, w2, None, 1, 1, 0), Err(Error::Config(_))));
    }

    fn tconv(x: &[f64], w: &[f64], stride: usize) -> Vec<f64> {
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::from_f64(&[1, x.len()], x).unwrap());
        let wv = g.constant(Tensor::from_f64(&[1, 1, w.len()], w).unwrap());
        let y = g.conv_transpose1d(xv, wv, None, stride, 0).unwrap();
        g.value(y).to_f64_vec()
    }

    #[test]
    fn conv_transpose1d_examples() {
        assert_eq!(tconv(&[1.0, 2.0], &[1.0, 1.0], 2), vec![1.0, 1.0, 2.0, 2.0]);
        assert_eq!(tconv(&[5.0], &[1.0, 0.0, 0.0], 1), vec![5.0, 0.0, 0.0]);
    }

    #[test]
    fn weight_norm_identity_and_zero_channel() {
        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::from_f64(&[1, 2], &[0.6, 0.8]).unwrap());
        let gain = g.constant(Tensor::from_f64(&[1], &[1.0]).unwrap());
        let w = g.weight_norm(v, gain).unwrap();
        assert_eq!(g.value(w).data(), &[0.6, 0.8]);
        let z = g.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(g.weight_norm(z, gain), Err(Error::NumericDegeneracy(_))));
    }
}
