//! Simplex-constrained sequence VAE (CP-VAE) for controllable text generation,
//! with aggregated-posterior diagnostics and evaluation metrics.

pub mod error;
pub mod numeric;
pub mod text;
pub mod model;
pub mod train;
pub mod generate;
pub mod eval;
pub mod diagnostics;
pub mod pipeline;

pub use error::{Error, Result};
