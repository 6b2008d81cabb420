use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::kernels::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of full frames of an uncentered STFT.
pub fn stft_frames(len: usize, n_fft: usize, hop: usize) -> Option<usize> {
    (len >= n_fft && hop > 0 && n_fft > 0).then(|| (len - n_fft) / hop + 1)
}

impl<T: Real> Graph<T> {
    /// Hann-windowed, uncentered STFT of `x: [len]` giving `[2, frames, n_fft/2 + 1]`
    /// (real part, then imaginary part).
    pub fn stft(&mut self, x: Var, n_fft: usize, hop: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 1 {
            return Err(Error::shape(format!("stft needs a rank-1 signal, got {s:?}")));
        }
        let len = s[0];
        let frames = stft_frames(len, n_fft, hop)
            .ok_or_else(|| Error::InputTooShort(format!("stft of {len} samples with n_fft {n_fft}")))?;
        let bins = n_fft / 2 + 1;
        let window = Arc::new(hann_window(n_fft));
        let fft = plan(n_fft, false);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); 2 * frames * bins];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for f in 0..frames {
            for (m, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(xd[f * hop + m].as_f64() * window[m], 0.0);
            }
            fft.process(&mut buf);
            for (b, c) in buf.iter().take(bins).enumerate() {
                out[f * bins + b] = T::from_f64(c.re);
                out[(frames + f) * bins + b] = T::from_f64(c.im);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![2, frames, bins], out),
            &[x],
            Box::new(move |_, _, g| {
                let ifft = plan(n_fft, true);
                let gd = g.data();
                let mut gx = vec![T::zero(); len];
                let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
                for f in 0..frames {
                    buf.iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
                    for (b, slot) in buf.iter_mut().enumerate().take(bins) {
                        *slot = Complex::new(gd[f * bins + b].as_f64(), gd[(frames + f) * bins + b].as_f64());
                    }
                    ifft.process(&mut buf);
                    for (m, c) in buf.iter().enumerate() {
                        gx[f * hop + m] += T::from_f64(c.re * window[m]);
                    }
                }
                vec![Some(Tensor::from_parts(vec![len], gx))]
            }),
        ))
    }

    /// `[2, ...] -> [...]` magnitude of (real, imaginary) planes. The
    /// gradient at an exact zero is taken as zero.
    pub fn complex_abs(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.first() != Some(&2) {
            return Err(Error::shape(format!("complex_abs needs a leading axis of 2, got {s:?}")));
        }
        let half = self.value(x).numel() / 2;
        let xd = self.value(x).data();
        let mag: Vec<T> = (0..half).map(|i| (xd[i] * xd[i] + xd[half + i] * xd[half + i]).sqrt()).collect();
        let out_shape = s[1..].to_vec();
        Ok(self.push(
            Tensor::from_parts(out_shape, mag),
            &[x],
            Box::new(move |ins, out, g| {
                let (xd, md, gd) = (ins[0].data(), out.data(), g.data());
                let mut gx = vec![T::zero(); 2 * half];
                for i in 0..half {
                    if md[i] > T::zero() {
                        gx[i] = gd[i] * xd[i] / md[i];
                        gx[half + i] = gd[i] * xd[half + i] / md[i];
                    }
                }
                vec![Some(Tensor::from_parts(s.clone(), gx))]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stft_matches_naive_dft() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin() + 0.1 * i as f64).collect();
        let (n, hop) = (16, 8);
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::from_f64(&[40], &x).unwrap());
        let s = g.stft(xv, n, hop).unwrap();
        let frames = stft_frames(40, n, hop).unwrap();
        assert_eq!(g.shape(s), &[2, frames, n / 2 + 1]);
        let w = hann_window(n);
        let d = g.value(s).data();
        for f in 0..frames {
            for b in 0..=n / 2 {
                let (mut re, mut im) = (0.0, 0.0);
                for m in 0..n {
                    let a = -2.0 * std::f64::consts::PI * (b * m) as f64 / n as f64;
                    re += x[f * hop + m] * w[m] * a.cos();
                    im += x[f * hop + m] * w[m] * a.sin();
                }
                assert!((d[f * 9 + b] - re).abs() < 1e-10);
                assert!((d[(frames + f) * 9 + b] - im).abs() < 1e-10);
            }
        }
    }
}
