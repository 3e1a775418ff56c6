//! Aggregated posterior as a uniform mixture of per-sentence diagonal Gaussians.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CpVaeModel;
use crate::numeric::log_sum_exp;
use crate::text::Corpus;

/// Environment variable capping diagnostic worker threads.
pub const THREADS_ENV: &str = "CPVAE_THREADS";

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureData")]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    /// `-½ Σ log(2π σ²)` per component.
    #[serde(skip)]
    log_norm: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        if means.is_empty() || means.len() != variances.len() {
            return Err(Error::usage("mixture needs matching, non-empty means and variances"));
        }
        let d = means[0].len();
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != d || v.len() != d {
                return Err(Error::usage("mixture components differ in dimension"));
            }
            if v.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(Error::NumericDomain("mixture variances must be positive".into()));
            }
        }
        let log_norm = variances
            .iter()
            .map(|v| -0.5 * v.iter().map(|s| LN_2PI + s.ln()).sum::<f64>())
            .collect();
        Ok(Self {
            means,
            variances,
            log_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// `log N(code; μᵢ, diag σᵢ²)` for component `i`.
    pub fn component_log_density(&self, i: usize, code: &[f64]) -> f64 {
        let q: f64 = code
            .iter()
            .zip(&self.means[i])
            .zip(&self.variances[i])
            .map(|((x, m), s)| (x - m) * (x - m) / s)
            .sum();
        self.log_norm[i] - 0.5 * q
    }

    /// `-log[(1/M) Σᵢ N(code; μᵢ, diag σᵢ²)]`.
    pub fn nll(&self, code: &[f64]) -> Result<f64> {
        if code.len() != self.dim() {
            return Err(Error::usage(format!(
                "code has {} dimensions, mixture has {}",
                code.len(),
                self.dim()
            )));
        }
        let logs: Vec<f64> = (0..self.len()).map(|i| self.component_log_density(i, code)).collect();
        Ok((self.len() as f64).ln() - log_sum_exp(&logs))
    }

    /// [`Self::nll`] for many codes, evaluated in parallel.
    pub fn nll_batch(&self, codes: &[Vec<f64>]) -> Result<Vec<f64>> {
        with_pool(|| codes.par_iter().map(|c| self.nll(c)).collect())
    }
}

#[derive(Deserialize)]
struct MixtureData {
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl TryFrom<MixtureData> for GaussianMixture {
    type Error = Error;

    fn try_from(d: MixtureData) -> Result<Self> {
        Self::new(d.means, d.variances)
    }
}

/// Free function form of [`GaussianMixture::nll`].
pub fn mixture_nll(mixture: &GaussianMixture, code: &[f64]) -> Result<f64> {
    mixture.nll(code)
}

/// Worker count from `CPVAE_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs `f` on a pool honouring [`thread_cap`]. Results do not depend on the
/// number of threads.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match thread_cap().and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// Which latent the mixture is fitted over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentPart {
    /// `z1` for a structured model, the whole code otherwise.
    Default,
    Z1,
    Z2,
}

/// Posterior mean and variance of the chosen latent part for one sentence.
pub fn posterior(model: &CpVaeModel, tokens: &[usize], part: LatentPart) -> Result<(Vec<f64>, Vec<f64>)> {
    let b = model.encode(tokens)?;
    let use_z1 = match part {
        LatentPart::Default => model.is_structured(),
        LatentPart::Z1 => {
            if !model.is_structured() {
                return Err(Error::usage("the baseline model has no z1"));
            }
            true
        }
        LatentPart::Z2 => false,
    };
    let (mu, lv) = if use_z1 { (b.mu1, b.logvar1) } else { (b.mu2, b.logvar2) };
    Ok((mu, lv.iter().map(|l| l.exp()).collect()))
}

/// One component per sentence of a seeded uniform subsample (without
/// replacement) of size `m`.
pub fn fit_aggregated_posterior(
    model: &CpVaeModel,
    corpus: &Corpus,
    m: usize,
    seed: u64,
    part: LatentPart,
) -> Result<GaussianMixture> {
    if m == 0 {
        return Err(Error::usage("mixture size must be at least 1"));
    }
    if m > corpus.len() {
        return Err(Error::usage(format!("mixture size {m} exceeds corpus size {}", corpus.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, corpus.len(), m).into_vec();
    idx.sort_unstable();
    let comps: Vec<(Vec<f64>, Vec<f64>)> = with_pool(|| {
        idx.par_iter()
            .map(|&i| posterior(model, corpus.sentence(i), part))
            .collect::<Result<_>>()
    })?;
    let (means, vars) = comps.into_iter().unzip();
    GaussianMixture::new(means, vars)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_value_of_one_component() {
        let var = vec![0.5, 2.0, 0.1];
        let g = GaussianMixture::new(vec![vec![1.0, -2.0, 0.5]], vec![var.clone()]).unwrap();
        let expected = 0.5 * var.iter().map(|s| (2.0 * std::f64::consts::PI * s).ln()).sum::<f64>();
        assert!((g.nll(&[1.0, -2.0, 0.5]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_at_midpoint() {
        let g = GaussianMixture::new(vec![vec![-1.0], vec![1.0]], vec![vec![1.0], vec![1.0]]).unwrap();
        // both components give density exp(-1/2)/sqrt(2π)
        let expected = 0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5;
        assert!((g.nll(&[0.0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn radial_monotone_and_far_codes_finite() {
        let g = GaussianMixture::new(vec![vec![0.0, 0.0]], vec![vec![1.0, 1.0]]).unwrap();
        let mut last = f64::NEG_INFINITY;
        for r in [0.0, 0.5, 1.0, 4.0, 100.0] {
            let v = g.nll(&[r, 0.0]).unwrap();
            assert!(v > last);
            last = v;
        }
        let far = GaussianMixture::new(vec![vec![0.0]; 3], vec![vec![1e-4]; 3]).unwrap();
        assert!(far.nll(&[50.0]).unwrap().is_finite());
        assert!(g.nll(&[0.0]).is_err());
        assert!(GaussianMixture::new(vec![vec![0.0]], vec![vec![0.0]]).is_err());
    }
}
