//! Beam search and greedy decoding over any step-wise language model.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{CpVaeModel, DecoderState};
use crate::text::{BOS, EOS, PAD};

/// An autoregressive model that yields next-token log-probabilities.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    fn start(&self) -> Result<Self::State>;
    /// Consumes `token` and returns the new state plus log-probabilities of the next token.
    fn step(&self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>)>;
}

/// The decoder of a trained model conditioned on a fixed latent code.
pub struct LatentDecoder<'a> {
    pub model: &'a CpVaeModel,
    pub z: Vec<f64>,
}

impl StepModel for LatentDecoder<'_> {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn start(&self) -> Result<DecoderState> {
        self.model.decoder_start(&self.z)
    }

    fn step(&self, state: &DecoderState, token: usize) -> Result<(DecoderState, Vec<f64>)> {
        self.model.decoder_step(state, token, &self.z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Maximum number of generated tokens, not counting `</s>`.
    pub max_len: usize,
    /// Rank finished hypotheses by mean instead of summed log-probability.
    pub length_normalize: bool,
}

pub const DEFAULT_BEAM_SIZE: usize = 5;

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: DEFAULT_BEAM_SIZE,
            max_len: 30,
            length_normalize: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BeamHypothesis<S> {
    /// Generated ids without `<s>` or `</s>`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: S,
    pub finished: bool,
}

/// Decoded sequence and its total log-probability (including `</s>` when emitted).
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

/// Higher score first, then shorter, then lexicographically smaller ids.
fn rank(a_score: f64, a: &[usize], b_score: f64, b: &[usize]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.len().cmp(&b.len()))
        .then_with(|| a.cmp(b))
}

fn final_score(h: &Decoded, normalize: bool) -> f64 {
    if normalize {
        h.log_prob / (h.tokens.len() + 1) as f64
    } else {
        h.log_prob
    }
}

fn emittable(tok: usize) -> bool {
    tok != PAD && tok != BOS
}

pub fn beam_search<M: StepModel>(model: &M, config: BeamConfig) -> Result<Decoded> {
    if config.beam_size == 0 {
        return Err(Error::usage("beam size must be at least 1"));
    }
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.start()?,
        finished: false,
    }];
    let mut finished: Vec<Decoded> = Vec::new();
    if config.max_len == 0 {
        // only `</s>` may follow
        let (_, lp) = model.step(&live[0].state, BOS)?;
        return Ok(Decoded {
            tokens: vec![],
            log_prob: lp[EOS],
        });
    }
    while !live.is_empty() {
        // (score, tokens, parent, is_eos, next state)
        let mut pool: Vec<(f64, Vec<usize>, bool, M::State)> = Vec::new();
        for h in &live {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let (state, lp) = model.step(&h.state, prev)?;
            for (tok, &l) in lp.iter().enumerate() {
                if !emittable(tok) || l == f64::NEG_INFINITY {
                    continue;
                }
                let score = h.log_prob + l;
                if tok == EOS {
                    pool.push((score, h.tokens.clone(), true, state.clone()));
                } else {
                    let mut t = h.tokens.clone();
                    t.push(tok);
                    pool.push((score, t, false, state.clone()));
                }
            }
        }
        pool.sort_by(|a, b| rank(a.0, &a.1, b.0, &b.1).then_with(|| b.2.cmp(&a.2)));
        live.clear();
        for (score, tokens, eos, state) in pool.into_iter().take(config.beam_size) {
            if eos || tokens.len() >= config.max_len {
                finished.push(Decoded { tokens, log_prob: score });
            } else {
                live.push(BeamHypothesis {
                    tokens,
                    log_prob: score,
                    state,
                    finished: false,
                });
            }
        }
        if !config.length_normalize {
            // extensions can only lower a score
            let best_done = finished.iter().map(|d| d.log_prob).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= best_live {
                break;
            }
        }
    }
    finished
        .into_iter()
        .min_by(|a, b| {
            rank(
                final_score(a, config.length_normalize),
                &a.tokens,
                final_score(b, config.length_normalize),
                &b.tokens,
            )
        })
        .ok_or_else(|| Error::NumericDomain("beam search produced no hypothesis".into()))
}

/// Arg-max decoding; ties go to the lowest token id.
pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Result<Decoded> {
    let mut state = model.start()?;
    let mut prev = BOS;
    let mut out = Decoded {
        tokens: vec![],
        log_prob: 0.0,
    };
    loop {
        let (next, lp) = model.step(&state, prev)?;
        if out.tokens.len() >= max_len {
            if max_len == 0 {
                out.log_prob += lp[EOS];
            }
            return Ok(out);
        }
        let mut best = None;
        for (tok, &l) in lp.iter().enumerate() {
            if emittable(tok) && best.is_none_or(|(_, b)| l > b) {
                best = Some((tok, l));
            }
        }
        let (tok, l) = best.ok_or_else(|| Error::NumericDomain("no emittable token".into()))?;
        out.log_prob += l;
        if tok == EOS {
            return Ok(out);
        }
        out.tokens.push(tok);
        state = next;
        prev = tok;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bigram table over ids `0..6`: pad, bos, eos, a, b, c.
    pub(crate) struct Bigram(pub Vec<Vec<f64>>);

    impl StepModel for Bigram {
        type State = ();
        fn vocab_size(&self) -> usize {
            6
        }
        fn start(&self) -> Result<()> {
            Ok(())
        }
        fn step(&self, _: &(), token: usize) -> Result<((), Vec<f64>)> {
            Ok(((), self.0[token].clone()))
        }
    }

    fn row(p: [f64; 4]) -> Vec<f64> {
        // probabilities for eos, a, b, c
        vec![f64::NEG_INFINITY, f64::NEG_INFINITY, p[0].ln(), p[1].ln(), p[2].ln(), p[3].ln()]
    }

    #[test]
    fn greedy_and_beam_one_agree() {
        let m = Bigram(vec![
            row([0.25; 4]),
            row([0.1, 0.5, 0.2, 0.2]),
            row([0.25; 4]),
            row([0.2, 0.1, 0.6, 0.1]),
            row([0.7, 0.1, 0.1, 0.1]),
            row([0.25; 4]),
        ]);
        let g = greedy_decode(&m, 5).unwrap();
        let b = beam_search(
            &m,
            BeamConfig {
                beam_size: 1,
                max_len: 5,
                length_normalize: false,
            },
        )
        .unwrap();
        assert_eq!(g, b);
        assert_eq!(g.tokens, vec![3, 4]);
    }

    #[test]
    fn ties_prefer_shorter_then_lexicographic() {
        assert_eq!(rank(-1.0, &[3], -1.0, &[3, 4]), Ordering::Less);
        assert_eq!(rank(-1.0, &[3, 5], -1.0, &[4, 3]), Ordering::Less);
        assert_eq!(rank(-0.5, &[3, 5, 5], -1.0, &[3]), Ordering::Less);
    }

    #[test]
    fn truncates_at_max_len() {
        let m = Bigram(vec![row([0.01, 0.33, 0.33, 0.33]); 6]);
        let d = beam_search(&m, BeamConfig { beam_size: 3, max_len: 4, length_normalize: false }).unwrap();
        assert!(d.tokens.len() <= 4);
        assert!(beam_search(&m, BeamConfig { beam_size: 0, max_len: 4, length_normalize: false }).is_err());
    }
}
