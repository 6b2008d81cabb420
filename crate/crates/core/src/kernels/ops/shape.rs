use std::sync::Arc;

use crate::kernels::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Marks an output element that reads as zero (padding).
const ZERO: usize = usize::MAX;

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Graph<T> {
    /// `out[i] = x[index[i]]`, or zero where `index[i] == ZERO`. Gradients
    /// scatter-add back, so repeated indices accumulate.
    fn gather(&mut self, x: Var, out_shape: Vec<usize>, index: Vec<usize>) -> Var {
        let src = self.value(x).data();
        let data = index.iter().map(|&i| if i == ZERO { T::zero() } else { src[i] }).collect();
        let in_shape = self.shape(x).to_vec();
        let index = Arc::new(index);
        self.push(
            Tensor::from_parts(out_shape, data),
            &[x],
            Box::new(move |_, _, g| {
                let mut gx = Tensor::zeros(&in_shape);
                let d = gx.data_mut();
                for (&i, &gv) in index.iter().zip(g.data()) {
                    if i != ZERO {
                        d[i] += gv;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::shape(format!("reshape {:?} -> {:?}", self.shape(x), shape)));
        }
        let out = Tensor::from_parts(shape.to_vec(), self.value(x).data().to_vec());
        let in_shape = self.shape(x).to_vec();
        Ok(self.push(
            out,
            &[x],
            Box::new(move |_, _, g| vec![Some(Tensor::from_parts(in_shape.clone(), g.data().to_vec()))]),
        ))
    }

    /// `[r, c] -> [c, r]`.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape(format!("transpose needs rank 2, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let index = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        Ok(self.gather(x, vec![c, r], index))
    }

    /// `[b*l, h*dh] -> [b*h, l, dh]` for `b` sequences of length `l`.
    pub fn split_heads(&mut self, x: Var, batch: usize, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || batch == 0 || s[0] % batch != 0 || s[1] % heads != 0 {
            return Err(Error::shape(format!("split_heads {s:?} into batch {batch}, heads {heads}")));
        }
        let (l, dh) = (s[0] / batch, s[1] / heads);
        let width = s[1];
        let mut index = Vec::with_capacity(s[0] * s[1]);
        for b in 0..batch {
            for h in 0..heads {
                for t in 0..l {
                    for e in 0..dh {
                        index.push((b * l + t) * width + h * dh + e);
                    }
                }
            }
        }
        Ok(self.gather(x, vec![batch * heads, l, dh], index))
    }

    /// Inverse of [`Graph::split_heads`].
    pub fn merge_heads(&mut self, x: Var, batch: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || batch == 0 || s[0] % batch != 0 {
            return Err(Error::shape(format!("merge_heads {s:?} with batch {batch}")));
        }
        let (heads, l, dh) = (s[0] / batch, s[1], s[2]);
        let mut index = Vec::with_capacity(s.iter().product());
        for b in 0..batch {
            for t in 0..l {
                for h in 0..heads {
                    for e in 0..dh {
                        index.push(((b * heads + h) * l + t) * dh + e);
                    }
                }
            }
        }
        Ok(self.gather(x, vec![batch * l, heads * dh], index))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape(format!("narrow {s:?} axis {axis} [{start}, {})", start + len)));
        }
        let (outer, dim, inner) = outer_inner(&s, axis);
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for i in start..start + len {
                let base = (o * dim + i) * inner;
                index.extend(base..base + inner);
            }
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.gather(x, shape, index))
    }

    /// Zero padding along the last axis.
    pub fn pad_last(&mut self, x: Var, left: usize, right: usize) -> Var {
        let s = self.shape(x).to_vec();
        let n = *s.last().unwrap();
        let rows = self.value(x).numel() / n.max(1);
        let out_n = left + n + right;
        let mut index = Vec::with_capacity(rows * out_n);
        for r in 0..rows {
            index.extend(std::iter::repeat_n(ZERO, left));
            index.extend(r * n..(r + 1) * n);
            index.extend(std::iter::repeat_n(ZERO, right));
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = out_n;
        self.gather(x, shape, index)
    }

    /// Embedding lookup: rows `ids` of a `[vocab, dim]` table.
    pub fn index_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::shape(format!("index_rows needs a rank-2 table, got {s:?}")));
        }
        let (vocab, dim) = (s[0], s[1]);
        let mut index = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index { index: id, size: vocab });
            }
            index.extend(id * dim..(id + 1) * dim);
        }
        Ok(self.gather(table, vec![ids.len(), dim], index))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| Error::shape("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape(format!("concat axis {axis} for {first:?}")));
        }
        let mut dims = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return Err(Error::shape(format!("concat {first:?} with {s:?} on axis {axis}")));
            }
            dims.push(s[axis]);
        }
        let (outer, _, inner) = outer_inner(&first, axis);
        let total: usize = dims.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &d) in xs.iter().zip(&dims) {
                let src = self.value(x).data();
                data.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let in_shapes: Vec<Vec<usize>> = xs.iter().map(|&x| self.shape(x).to_vec()).collect();
        Ok(self.push(
            Tensor::from_parts(shape, data),
            xs,
            Box::new(move |_, _, g| {
                let mut out: Vec<Vec<T>> = in_shapes.iter().map(|s| Vec::with_capacity(s.iter().product())).collect();
                let gd = g.data();
                let mut pos = 0;
                for _ in 0..outer {
                    for (buf, &d) in out.iter_mut().zip(&dims) {
                        buf.extend_from_slice(&gd[pos..pos + d * inner]);
                        pos += d * inner;
                    }
                }
                out.into_iter()
                    .zip(&in_shapes)
                    .map(|(d, s)| Some(Tensor::from_parts(s.clone(), d)))
                    .collect()
            }),
        ))
    }
}
