//! The split-latent VAE: encoders, simplex mapping, decoder and objective.

pub mod checkpoint;
pub mod config;
pub mod losses;
pub mod network;

pub use checkpoint::Checkpoint;
pub use config::{BasisInit, ModelConfig, ModelMode};
pub use losses::{kl_gaussian, reg_loss, s_rec_loss, sample_latent};
pub use network::{
    BatchInput, CpVaeModel, DecoderState, ForwardMode, LatentBundle, LossBreakdown, LossVars, LossWeights,
};
