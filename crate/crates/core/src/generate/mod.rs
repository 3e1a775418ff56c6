//! Decoding and latent manipulation.

pub mod basis;
pub mod beam;
pub mod manipulate;
pub mod transfer;

pub use basis::{assign_basis, identify_basis, BasisAssignment, SAMPLES_PER_CLASS};
pub use beam::{beam_search, greedy_decode, BeamConfig, BeamHypothesis, Decoded, LatentDecoder, StepModel};
pub use manipulate::{baseline_identify_dim, baseline_manipulate, direction_toward, DimChoice, DimStats, Strategy};
pub use transfer::{decode_latent, style_transfer, topic_transition_generate, transfer_latent};
