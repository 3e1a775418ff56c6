use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// Split latent with a simplex-constrained structured part.
    Cpvae,
    /// Single Gaussian latent of width `z2_dim`, no simplex machinery.
    BetaVaeBaseline,
}

impl std::str::FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cpvae" => Ok(Self::Cpvae),
            "beta_vae_baseline" => Ok(Self::BetaVaeBaseline),
            other => Err(Error::Config {
                key: "mode".into(),
                message: format!("unknown mode `{other}` (expected cpvae or beta_vae_baseline)"),
            }),
        }
    }
}

impl std::fmt::Display for ModelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cpvae => "cpvae",
            Self::BetaVaeBaseline => "beta_vae_baseline",
        })
    }
}

/// How the basis matrix is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisInit {
    /// i.i.d. `N(0, α/N₁)`, so each column has expected squared norm α.
    Gaussian,
    /// Orthonormal columns scaled by `√α`.
    Orthogonal,
}

/// Architecture hyperparameters; everything needed to rebuild the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: ModelMode,
    pub vocab_size: usize,
    /// Width of the pretrained word vectors averaged into the sentence representation.
    pub embed_dim: usize,
    pub k: usize,
    pub alpha: f64,
    pub z1_dim: usize,
    pub z2_dim: usize,
    pub mlp_hidden: usize,
    pub enc_input: usize,
    pub enc_hidden: usize,
    pub dec_input: usize,
    pub dec_hidden: usize,
    pub dropout: f64,
    pub basis_init: BasisInit,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Config { key: key.into(), message });
        let positive = [
            ("vocab_size", self.vocab_size),
            ("z2_dim", self.z2_dim),
            ("enc_input", self.enc_input),
            ("enc_hidden", self.enc_hidden),
            ("dec_input", self.dec_input),
            ("dec_hidden", self.dec_hidden),
        ];
        for (key, v) in positive {
            if v == 0 {
                return bad(key, "must be positive".into());
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("{} not in [0, 1)", self.dropout));
        }
        if self.mode == ModelMode::Cpvae {
            for (key, v) in [("embed_dim", self.embed_dim), ("k", self.k), ("z1_dim", self.z1_dim), ("mlp_hidden", self.mlp_hidden)] {
                if v == 0 {
                    return bad(key, "must be positive".into());
                }
            }
            if self.k > self.z1_dim {
                return bad("k", format!("K = {} exceeds z1_dim = {}", self.k, self.z1_dim));
            }
            if !(self.alpha > 0.0 && self.alpha.is_finite()) {
                return bad("alpha", format!("{} is not a positive number", self.alpha));
            }
        }
        Ok(())
    }

    /// Width of the decoder's conditioning vector.
    pub fn latent_dim(&self) -> usize {
        match self.mode {
            ModelMode::Cpvae => self.z1_dim + self.z2_dim,
            ModelMode::BetaVaeBaseline => self.z2_dim,
        }
    }
}
