//! Loss terms, each in a plain form on slices and a tape form on batches.

use crate::error::{Error, Result};
use crate::numeric::{Tape, Var};

pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 20.0;

/// `z = mu + exp(logvar / 2) ⊙ noise`.
pub fn sample_latent(mu: &[f64], logvar: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != noise.len() {
        return Err(Error::usage(format!(
            "sample_latent: mu {}, logvar {}, noise {}",
            mu.len(),
            logvar.len(),
            noise.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(noise)
        .map(|((m, lv), e)| m + (lv.clamp(LOGVAR_MIN, LOGVAR_MAX) / 2.0).exp() * e)
        .collect())
}

/// KL from `N(mu, diag(exp(logvar)))` to `N(0, I)`, summed over dimensions.
pub fn kl_gaussian(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(Error::usage(format!("kl_gaussian: mu {} vs logvar {}", mu.len(), logvar.len())));
    }
    Ok(0.5
        * mu
            .iter()
            .zip(logvar)
            .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
            .sum::<f64>())
}

/// `‖EᵀE − αI‖_F` for `E` stored row-major as `[n, k]`.
pub fn reg_loss(basis: &[f64], n: usize, k: usize, alpha: f64) -> Result<f64> {
    if basis.len() != n * k || k == 0 {
        return Err(Error::usage(format!("reg_loss: {} values for a {n}x{k} basis", basis.len())));
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            let g: f64 = (0..n).map(|r| basis[r * k + i] * basis[r * k + j]).sum();
            let d = if i == j { g - alpha } else { g };
            total += d * d;
        }
    }
    Ok(total.sqrt())
}

/// `(1/m) Σᵢ max(0, 1 − h·mu1 + h·negᵢ)`.
pub fn s_rec_loss(h: &[f64], mu1: &[f64], negatives: &[Vec<f64>]) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::usage("s_rec_loss needs at least one negative sample"));
    }
    if h.len() != mu1.len() || negatives.iter().any(|n| n.len() != h.len()) {
        return Err(Error::usage("s_rec_loss: dimension mismatch"));
    }
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let pos = dot(h, mu1);
    let total: f64 = negatives
        .iter()
        .map(|n| (1.0 - pos + dot(h, n)).max(0.0))
        .sum();
    Ok(total / negatives.len() as f64)
}

/// Per-row KL as `[B, 1]`.
pub fn kl_gaussian_tape(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let mu2 = tape.square(mu);
    let var = tape.exp(logvar);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, logvar)?;
    let b = tape.add_scalar(b, -1.0);
    let s = tape.row_sum(b);
    Ok(tape.scale(s, 0.5))
}

/// `basis` is the `[n, k]` basis node.
pub fn reg_loss_tape(tape: &mut Tape, basis: Var, alpha: f64) -> Result<Var> {
    let k = tape.shape(basis).1;
    let et = tape.transpose(basis);
    let gram = tape.matmul(et, basis)?;
    let mut eye = vec![0.0; k * k];
    for i in 0..k {
        eye[i * k + i] = alpha;
    }
    let eye = tape.constant(k, k, eye);
    let diff = tape.sub(gram, eye)?;
    Ok(tape.frobenius_norm(diff))
}

/// Mean hinge over `B·m` rows. `h`, `mu1`: `[B, n]`; `neg_mu1`: `[B·m, n]`
/// where rows `b·m .. (b+1)·m` are the negatives of element `b`.
pub fn s_rec_loss_tape(tape: &mut Tape, h: Var, mu1: Var, neg_mu1: Var, m: usize) -> Result<Var> {
    let (b, _) = tape.shape(h);
    if m == 0 || tape.shape(neg_mu1).0 != b * m {
        return Err(Error::usage(format!(
            "s_rec_loss: {} negative rows for batch {b} with m = {m}",
            tape.shape(neg_mu1).0
        )));
    }
    let idx: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, m)).collect();
    let h_rep = tape.gather(h, &idx, 1)?;
    let mu_rep = tape.gather(mu1, &idx, 1)?;
    let pos = tape.row_dot(h_rep, mu_rep)?;
    let neg = tape.row_dot(h_rep, neg_mu1)?;
    let margin = tape.sub(neg, pos)?;
    let margin = tape.add_scalar(margin, 1.0);
    let hinge = tape.relu(margin);
    Ok(tape.mean(hinge))
}
