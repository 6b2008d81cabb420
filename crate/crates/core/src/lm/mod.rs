//! Hierarchical global/local autoregressive model over token grids.

mod config;
mod model;
mod sample;
mod train;

pub use config::{LmConfig, BOS_ID, TEXT_VOCAB};
pub use model::{HierLm, PositionCounter, SynthOptions};
pub use sample::{argmax, sample_top_k, top_k_probs};
pub use train::{LmExample, LmStepReport, LmTrainer};
