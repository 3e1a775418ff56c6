use super::beam::{beam_search, greedy_decode, BeamConfig, Decoded, LatentDecoder};
use crate::error::{Error, Result};
use crate::model::CpVaeModel;
use crate::text::{BOS, EOS, PAD};

/// Decoder input `[e_target; mu2(sentence)]`.
pub fn transfer_latent(model: &CpVaeModel, tokens: &[usize], target_basis: usize) -> Result<Vec<f64>> {
    let (mu2, _) = model.encode_unstructured(tokens)?;
    let mut z = model.basis_vector(target_basis)?;
    z.extend(mu2);
    Ok(z)
}

/// Re-generates `tokens` with `z1` fixed to basis vector `target_basis`
/// and `z2` the posterior mean of the source.
pub fn style_transfer(model: &CpVaeModel, tokens: &[usize], target_basis: usize, beam: BeamConfig) -> Result<Decoded> {
    let z = transfer_latent(model, tokens, target_basis)?;
    beam_search(&LatentDecoder { model, z }, beam)
}

/// Decodes from an arbitrary latent code (posterior mean, manipulated code, ...).
pub fn decode_latent(model: &CpVaeModel, z: Vec<f64>, beam: BeamConfig) -> Result<Decoded> {
    beam_search(&LatentDecoder { model, z }, beam)
}

/// Greedy generation with `z1 = e_a` before `switch_step` generated tokens
/// and `z1 = e_b` from then on; the recurrent state carries over.
pub fn topic_transition_generate(
    model: &CpVaeModel,
    basis_a: usize,
    basis_b: usize,
    switch_step: usize,
    z2: &[f64],
    max_len: usize,
) -> Result<Decoded> {
    if switch_step == 0 || switch_step >= max_len {
        return Err(Error::usage(format!(
            "switch step {switch_step} must lie strictly between 0 and max_len {max_len}"
        )));
    }
    let latent = |i: usize| -> Result<Vec<f64>> {
        let mut z = model.basis_vector(i)?;
        z.extend_from_slice(z2);
        Ok(z)
    };
    let (za, zb) = (latent(basis_a)?, latent(basis_b)?);
    let before = greedy_decode(&LatentDecoder { model, z: za.clone() }, switch_step)?;
    if before.tokens.len() < switch_step {
        // finished before the switch
        return Ok(before);
    }
    // replay the prefix under e_a, then continue under e_b
    let mut state = model.decoder_start(&za)?;
    let mut prev = BOS;
    for &t in &before.tokens {
        state = model.decoder_step(&state, prev, &za)?.0;
        prev = t;
    }
    let mut out = before;
    while out.tokens.len() < max_len {
        let (next, lp) = model.decoder_step(&state, prev, &zb)?;
        let (tok, l) = lp
            .iter()
            .enumerate()
            .filter(|(t, _)| *t != PAD && *t != BOS)
            .fold(None, |best: Option<(usize, f64)>, (t, &l)| match best {
                Some((_, b)) if b >= l => best,
                _ => Some((t, l)),
            })
            .ok_or_else(|| Error::NumericDomain("no emittable token".into()))?;
        out.log_prob += l;
        if tok == EOS {
            break;
        }
        out.tokens.push(tok);
        state = next;
        prev = tok;
    }
    Ok(out)
}
