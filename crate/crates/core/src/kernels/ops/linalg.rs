use crate::kernels::{par, Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Batched `C[b] = op(A[b]) * op(B[b])` with `C[b]` of shape `[m, n]`.
///
/// `A[b]` is `[m, k]`, or `[k, m]` when `ta`; `B[b]` is `[k, n]`, or `[n, k]`
/// when `tb`. Rows of `C` are computed independently with a fixed summation
/// order, so results do not depend on threading.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bgemm<T: Real>(
    a: &[T],
    b: &[T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) -> Vec<T> {
    let mut c = vec![T::zero(); batch * m * n];
    par::chunks_mut(&mut c, n, |r, row| {
        let (bi, i) = (r / m, r % m);
        let a = &a[bi * m * k..(bi + 1) * m * k];
        let b = &b[bi * k * n..(bi + 1) * k * n];
        let a_at = |kk: usize| if ta { a[kk * m + i] } else { a[i * k + kk] };
        if tb {
            for (j, out) in row.iter_mut().enumerate() {
                let brow = &b[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for (kk, &bv) in brow.iter().enumerate() {
                    acc += a_at(kk) * bv;
                }
                *out = acc;
            }
        } else {
            for kk in 0..k {
                let av = a_at(kk);
                let brow = &b[kk * n..(kk + 1) * n];
                for (out, &bv) in row.iter_mut().zip(brow) {
                    *out += av * bv;
                }
            }
        }
    });
    c
}

impl<T: Real> Graph<T> {
    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = bgemm(self.value(a).data(), self.value(b).data(), 1, m, k, n, false, false);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            &[a, b],
            Box::new(move |ins, _, g| {
                let ga = bgemm(g.data(), ins[1].data(), 1, m, n, k, false, true);
                let gb = bgemm(ins[0].data(), g.data(), 1, k, m, n, true, false);
                vec![Some(Tensor::from_parts(vec![m, k], ga)), Some(Tensor::from_parts(vec![k, n], gb))]
            }),
        ))
    }

    /// `[m, k] x [n, k]^T -> [m, n]` (dense layer with `[out, in]` weights).
    pub fn matmul_nt(&mut self, a: Var, w: Var) -> Result<Var> {
        let (sa, sw) = (self.shape(a).to_vec(), self.shape(w).to_vec());
        if sa.len() != 2 || sw.len() != 2 || sa[1] != sw[1] {
            return Err(Error::shape(format!("matmul_nt {sa:?} x {sw:?}^T")));
        }
        let (m, k, n) = (sa[0], sa[1], sw[0]);
        let out = bgemm(self.value(a).data(), self.value(w).data(), 1, m, k, n, false, true);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            &[a, w],
            Box::new(move |ins, _, g| {
                let ga = bgemm(g.data(), ins[1].data(), 1, m, n, k, false, false);
                let gw = bgemm(g.data(), ins[0].data(), 1, n, m, k, true, false);
                vec![Some(Tensor::from_parts(vec![m, k], ga)), Some(Tensor::from_parts(vec![n, k], gw))]
            }),
        ))
    }

    /// `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape(format!("bmm {sa:?} x {sb:?}")));
        }
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let out = bgemm(self.value(a).data(), self.value(b).data(), bt, m, k, n, false, false);
        Ok(self.push(
            Tensor::from_parts(vec![bt, m, n], out),
            &[a, b],
            Box::new(move |ins, _, g| {
                let ga = bgemm(g.data(), ins[1].data(), bt, m, n, k, false, true);
                let gb = bgemm(ins[0].data(), g.data(), bt, k, m, n, true, false);
                vec![
                    Some(Tensor::from_parts(vec![bt, m, k], ga)),
                    Some(Tensor::from_parts(vec![bt, k, n], gb)),
                ]
            }),
        ))
    }

    /// `[b, m, k] x [b, n, k]^T -> [b, m, n]`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(Error::shape(format!("bmm_nt {sa:?} x {sb:?}^T")));
        }
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[1]);
        let out = bgemm(self.value(a).data(), self.value(b).data(), bt, m, k, n, false, true);
        Ok(self.push(
            Tensor::from_parts(vec![bt, m, n], out),
            &[a, b],
            Box::new(move |ins, _, g| {
                let ga = bgemm(g.data(), ins[1].data(), bt, m, n, k, false, false);
                let gb = bgemm(g.data(), ins[0].data(), bt, n, m, k, true, false);
                vec![
                    Some(Tensor::from_parts(vec![bt, m, k], ga)),
                    Some(Tensor::from_parts(vec![bt, n, k], gb)),
                ]
            }),
        ))
    }
}
