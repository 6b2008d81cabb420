//! Ultra-low frame-rate neural speech codec engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernels`]: dense arrays, a reverse-mode tape and every numerical
//!   primitive the models need.
//! * [`codec`]: convolutional encoder/decoder with a Transformer bottleneck.
//! * [`frvq`]: factorized residual vector quantization with cosine lookup.
//! * [`objectives`]: mel, adversarial, feature-matching and VQ losses plus
//!   the discriminators and the training step.
//! * [`lm`]: hierarchical global/local autoregressive token model.
//! * [`bitstream`]: the `.ucb` token container and bitrate arithmetic.
//! * [`bench`]: MAC accounting, RTF measurement and signal metrics.
//!
//! With the default `parallel` feature the heavy loops run on rayon; every
//! parallel loop partitions outputs so results are bit-identical to the
//! sequential build.

pub mod bench;
pub mod bitstream;
pub mod codec;
pub mod error;
pub mod frvq;
pub mod kernels;
pub mod lm;
pub mod nn;
pub mod objectives;

pub use error::{Error, Result};
pub use kernels::{Graph, ParamId, ParamStore, Real, Tensor, Var};
