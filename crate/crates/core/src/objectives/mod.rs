//! Training losses, discriminators and the codec training step.

mod data;
mod disc;
mod losses;
mod mel;
mod train;

pub use data::CropSampler;
pub use disc::{BranchOutput, DiscConfig, DiscriminatorSet, LEAKY_SLOPE};
pub use losses::{
    feature_matching_loss, generator_loss, lsgan_d_loss, lsgan_g_loss, vq_losses, LossTerms, LossWeights, TermVars,
};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelConfig, MelLoss};
pub use train::{CodecTrainer, Discriminator, StepReport, TrainConfig};
