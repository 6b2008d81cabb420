//! Differentiable primitives, implemented as methods on [`Graph`](super::Graph).

mod conv;
mod elementwise;
mod linalg;
mod nn;
mod shape;
mod spectral;

pub use conv::Conv2dSpec;
pub use nn::AttnMask;
pub use spectral::{hann_window, stft_frames};

/// Output length of a 1-d convolution, if at least one.
pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, dilation: usize, padding: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = len + 2 * padding;
    (padded >= span && stride > 0).then(|| (padded - span) / stride + 1)
}

/// Output length of a 1-d transposed convolution, if at least one.
pub fn conv_transpose1d_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if len == 0 {
        return None;
    }
    let full = (len - 1) * stride + kernel;
    (full > 2 * padding).then(|| full - 2 * padding)
}
