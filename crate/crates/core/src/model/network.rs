use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{BasisInit, ModelConfig, ModelMode};
use super::losses::{kl_gaussian_tape, reg_loss, reg_loss_tape, s_rec_loss_tape, LOGVAR_MAX, LOGVAR_MIN};
use crate::error::{Error, Result};
use crate::numeric::nn::{normal_tensor, LinearVars};
use crate::numeric::tensor::{log_softmax, softmax};
use crate::numeric::{lstm_step, masked_update, Linear, Lstm, ParamId, ParamStore, Tape, Tensor, Var};
use crate::text::{mean_of_rows, Batch, EmbeddingTable, BOS, EOS};

pub const SENTENCE_EMBEDDINGS: &str = "sentence_embeddings";
/// Standard deviation of the learned token embeddings at initialization.
pub const EMBED_INIT_STD: f64 = 1.0;

#[derive(Clone, Copy, Debug)]
struct Structured {
    table: ParamId,
    mlp: Linear,
    h_head: Linear,
    logvar_head: Linear,
    basis: ParamId,
    proj: Linear,
}

#[derive(Clone, Copy, Debug)]
struct Parts {
    structured: Option<Structured>,
    enc_embed: ParamId,
    enc: Lstm,
    mu_head: Linear,
    logvar_head: Linear,
    dec_embed: ParamId,
    dec_init: Linear,
    dec: Lstm,
    dec_out: Linear,
}

/// Encoder outputs for one sentence. In baseline mode the structured
/// fields are empty and `z2` is the whole latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentBundle {
    pub h: Vec<f64>,
    pub p: Vec<f64>,
    pub mu1: Vec<f64>,
    pub logvar1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub logvar2: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

impl LatentBundle {
    /// Decoder conditioning vector `[z1; z2]`.
    pub fn z(&self) -> Vec<f64> {
        self.z1.iter().chain(&self.z2).copied().collect()
    }
}

/// Coefficients of the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub use_reg: bool,
    pub use_srec: bool,
}

/// Stochastic parts of the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardMode {
    pub dropout: bool,
    pub sample: bool,
}

impl ForwardMode {
    pub const TRAIN: Self = Self {
        dropout: true,
        sample: true,
    };
    pub const EVAL: Self = Self {
        dropout: false,
        sample: false,
    };
}

/// Scalar loss nodes, each averaged per batch element. Terms that do not
/// apply to the configuration are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub rec: Var,
    pub kl1: Option<Var>,
    pub kl2: Var,
    pub reg: Option<Var>,
    pub srec: Option<Var>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub kl1: Option<f64>,
    pub kl2: f64,
    pub reg: Option<f64>,
    pub srec: Option<f64>,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossBreakdown {
        let get = |v: Var| tape.scalar_value(v);
        LossBreakdown {
            total: get(self.total),
            rec: get(self.rec),
            kl1: self.kl1.map(get),
            kl2: get(self.kl2),
            reg: self.reg.map(get),
            srec: self.srec.map(get),
        }
    }
}

/// Inputs for [`CpVaeModel::forward_loss`].
///
/// `reps` holds one sentence representation per batch row (`[B, d]`), and
/// `neg_reps` holds `m` representations per row (`[B·m, d]`); both are
/// ignored in baseline mode.
#[derive(Clone, Copy, Debug)]
pub struct BatchInput<'a> {
    pub batch: &'a Batch,
    pub reps: &'a [f64],
    pub neg_reps: &'a [f64],
    pub m: usize,
}

/// Recurrent decoder state for tape-free generation.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CpVaeModel {
    config: ModelConfig,
    store: ParamStore,
    parts: Parts,
}

impl CpVaeModel {
    /// Fresh parameters drawn from `seed`. The CP-VAE mode needs the
    /// pretrained word vectors that feed the structured encoder.
    pub fn new(config: ModelConfig, table: Option<&EmbeddingTable>, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.mode == ModelMode::Cpvae {
            let t = table.ok_or_else(|| Error::usage("the cpvae mode needs word vectors"))?;
            if t.dim() != config.embed_dim || t.rows() != config.vocab_size {
                return Err(Error::usage(format!(
                    "word vectors are {}x{}, model expects {}x{}",
                    t.rows(),
                    t.dim(),
                    config.vocab_size,
                    config.embed_dim
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let structured = match c.mode {
            ModelMode::Cpvae => {
                let matrix = table.map(|t| t.matrix().to_vec()).unwrap_or_default();
                let table = store.add(SENTENCE_EMBEDDINGS, Tensor::constant(vec![c.vocab_size, c.embed_dim], matrix)?);
                let mlp = Linear::new(&mut store, "mlp.hidden", c.embed_dim, c.mlp_hidden, &mut rng);
                let h_head = Linear::new(&mut store, "mlp.h", c.mlp_hidden, c.z1_dim, &mut rng);
                let logvar_head = Linear::new(&mut store, "mlp.logvar", c.mlp_hidden, c.z1_dim, &mut rng);
                let basis = store.add("simplex.basis", Tensor::zeros(vec![c.z1_dim, c.k], true));
                let proj = Linear::new(&mut store, "simplex.proj", c.z1_dim, c.k, &mut rng);
                let std = (c.alpha / c.z1_dim as f64).sqrt();
                *store.get_mut(basis) = normal_tensor(vec![c.z1_dim, c.k], std, &mut rng);
                Some(Structured {
                    table,
                    mlp,
                    h_head,
                    logvar_head,
                    basis,
                    proj,
                })
            }
            ModelMode::BetaVaeBaseline => None,
        };
        let enc_embed = store.add("enc.embed", normal_tensor(vec![c.vocab_size, c.enc_input], EMBED_INIT_STD, &mut rng));
        let enc = Lstm::new(&mut store, "enc.lstm", c.enc_input, c.enc_hidden, &mut rng);
        let mu_head = Linear::new(&mut store, "enc.mu", c.enc_hidden, c.z2_dim, &mut rng);
        let logvar_head = Linear::new(&mut store, "enc.logvar", c.enc_hidden, c.z2_dim, &mut rng);
        let dec_embed = store.add("dec.embed", normal_tensor(vec![c.vocab_size, c.dec_input], EMBED_INIT_STD, &mut rng));
        let zdim = c.latent_dim();
        let dec_init = Linear::new(&mut store, "dec.init", zdim, c.dec_hidden, &mut rng);
        let dec = Lstm::new(&mut store, "dec.lstm", c.dec_input + zdim, c.dec_hidden, &mut rng);
        let dec_out = Linear::new(&mut store, "dec.out", c.dec_hidden, c.vocab_size, &mut rng);
        let mut model = Self {
            config,
            store,
            parts: Parts {
                structured,
                enc_embed,
                enc,
                mu_head,
                logvar_head,
                dec_embed,
                dec_init,
                dec,
                dec_out,
            },
        };
        if model.config.mode == ModelMode::Cpvae && model.config.basis_init == BasisInit::Orthogonal {
            model.orthogonalize_basis()?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn is_structured(&self) -> bool {
        self.parts.structured.is_some()
    }

    /// Parameters of both encoders, including the basis and simplex projection.
    pub fn encoder_params(&self) -> Vec<ParamId> {
        let p = &self.parts;
        let mut ids = Vec::new();
        if let Some(s) = &p.structured {
            ids.extend(s.mlp.params());
            ids.extend(s.h_head.params());
            ids.extend(s.logvar_head.params());
            ids.push(s.basis);
            ids.extend(s.proj.params());
        }
        ids.push(p.enc_embed);
        ids.extend(p.enc.params());
        ids.extend(p.mu_head.params());
        ids.extend(p.logvar_head.params());
        ids
    }

    pub fn decoder_params(&self) -> Vec<ParamId> {
        let p = &self.parts;
        let mut ids = vec![p.dec_embed];
        ids.extend(p.dec_init.params());
        ids.extend(p.dec.params());
        ids.extend(p.dec_out.params());
        ids
    }

    pub fn trainable_params(&self) -> Vec<ParamId> {
        let mut ids = self.encoder_params();
        ids.extend(self.decoder_params());
        ids
    }

    pub fn basis_param(&self) -> Option<ParamId> {
        self.parts.structured.map(|s| s.basis)
    }

    /// The basis matrix `E`, row-major `[N₁, K]`.
    pub fn basis(&self) -> Option<&[f64]> {
        self.basis_param().map(|id| self.store.get(id).values())
    }

    /// Column `i` of `E`, i.e. the vertex `eᵢ` of the simplex.
    pub fn basis_vector(&self, i: usize) -> Result<Vec<f64>> {
        let e = self.basis().ok_or_else(|| Error::usage("baseline model has no basis"))?;
        let k = self.config.k;
        if i >= k {
            return Err(Error::usage(format!("basis index {i} out of {k}")));
        }
        Ok((0..self.config.z1_dim).map(|r| e[r * k + i]).collect())
    }

    pub fn reg_value(&self) -> Option<f64> {
        let c = &self.config;
        self.basis().map(|e| reg_loss(e, c.z1_dim, c.k, c.alpha).expect("basis shape"))
    }

    /// Replaces `E` by Gram-Schmidt orthonormalised columns scaled by `√α`,
    /// so that `EᵀE = αI` up to rounding.
    pub fn orthogonalize_basis(&mut self) -> Result<()> {
        let id = self.basis_param().ok_or_else(|| Error::usage("baseline model has no basis"))?;
        let (n, k, alpha) = (self.config.z1_dim, self.config.k, self.config.alpha);
        let e = self.store.get_mut(id).values_mut();
        let mut cols: Vec<Vec<f64>> = (0..k).map(|j| (0..n).map(|r| e[r * k + j]).collect()).collect();
        for j in 0..k {
            // modified Gram-Schmidt, two passes for stability
            for _ in 0..2 {
                for i in 0..j {
                    let d: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                    let prev = cols[i].clone();
                    for (x, q) in cols[j].iter_mut().zip(&prev) {
                        *x -= d * q;
                    }
                }
            }
            let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::NumericDomain(format!("basis column {j} is linearly dependent")));
            }
            cols[j].iter_mut().for_each(|x| *x /= norm);
        }
        let scale = alpha.sqrt();
        for (j, col) in cols.iter().enumerate() {
            for (r, x) in col.iter().enumerate() {
                e[r * k + j] = x * scale;
            }
        }
        Ok(())
    }

    fn structured(&self) -> Result<&Structured> {
        self.parts
            .structured
            .as_ref()
            .ok_or_else(|| Error::usage("operation needs the structured latent (cpvae mode)"))
    }

    /// Mean pretrained word vector of the sentence.
    pub fn sentence_rep(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let s = self.structured()?;
        mean_of_rows(tokens, self.store.get(s.table).values(), self.config.embed_dim)
    }

    /// `(h, logvar1)` from a sentence representation.
    pub fn encode_structured(&self, rep: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = self.structured()?;
        if rep.len() != self.config.embed_dim {
            return Err(Error::usage(format!(
                "representation width {} != {}",
                rep.len(),
                self.config.embed_dim
            )));
        }
        let hidden: Vec<f64> = s.mlp.apply(&self.store, rep).into_iter().map(f64::tanh).collect();
        let h = s.h_head.apply(&self.store, &hidden);
        let lv = s
            .logvar_head
            .apply(&self.store, &hidden)
            .into_iter()
            .map(|x| x.clamp(LOGVAR_MIN, LOGVAR_MAX))
            .collect();
        Ok((h, lv))
    }

    /// `p = softmax(Wh + b)` and `mu1 = E p`.
    pub fn map_to_simplex(&self, h: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = self.structured()?;
        if h.len() != self.config.z1_dim {
            return Err(Error::usage(format!("h width {} != {}", h.len(), self.config.z1_dim)));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericDomain("h has non-finite entries".into()));
        }
        let p = softmax(&s.proj.apply(&self.store, h))?;
        let mu1 = self.simplex_point(&p)?;
        Ok((p, mu1))
    }

    /// `E p` for arbitrary weights `p`.
    pub fn simplex_point(&self, p: &[f64]) -> Result<Vec<f64>> {
        let e = self.basis().ok_or_else(|| Error::usage("baseline model has no basis"))?;
        let k = self.config.k;
        if p.len() != k {
            return Err(Error::usage(format!("{} weights for {k} basis vectors", p.len())));
        }
        Ok(e.chunks(k).map(|row| row.iter().zip(p).map(|(a, b)| a * b).sum()).collect())
    }

    /// `(mu2, logvar2)` from the final hidden state of the recurrent encoder.
    pub fn encode_unstructured(&self, tokens: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        if tokens.is_empty() {
            return Err(Error::usage("cannot encode an empty sequence"));
        }
        let p = &self.parts;
        let hd = self.config.enc_hidden;
        let emb = self.store.get(p.enc_embed);
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for &t in tokens {
            if t >= self.config.vocab_size {
                return Err(Error::usage(format!("token id {t} out of vocabulary")));
            }
            (h, c) = p.enc.step(&self.store, emb.row(t), &h, &c);
        }
        let mu = p.mu_head.apply(&self.store, &h);
        let lv = p
            .logvar_head
            .apply(&self.store, &h)
            .into_iter()
            .map(|x| x.clamp(LOGVAR_MIN, LOGVAR_MAX))
            .collect();
        Ok((mu, lv))
    }

    /// Posterior means as latent codes (`z = mu`).
    pub fn encode(&self, tokens: &[usize]) -> Result<LatentBundle> {
        let (mu2, logvar2) = self.encode_unstructured(tokens)?;
        let mut out = LatentBundle {
            h: vec![],
            p: vec![],
            mu1: vec![],
            logvar1: vec![],
            z1: vec![],
            z2: mu2.clone(),
            mu2,
            logvar2,
        };
        if self.is_structured() {
            let rep = self.sentence_rep(tokens)?;
            let (h, logvar1) = self.encode_structured(&rep)?;
            let (p, mu1) = self.map_to_simplex(&h)?;
            out.z1 = mu1.clone();
            out.h = h;
            out.p = p;
            out.mu1 = mu1;
            out.logvar1 = logvar1;
        }
        Ok(out)
    }

    /// Like [`CpVaeModel::encode`] with reparameterised samples for `z1`, `z2`.
    pub fn encode_sampled<R: Rng>(&self, tokens: &[usize], rng: &mut R) -> Result<LatentBundle> {
        let mut b = self.encode(tokens)?;
        let mut draw = |mu: &[f64], lv: &[f64]| -> Vec<f64> {
            let noise: Vec<f64> = (0..mu.len()).map(|_| StandardNormal.sample(rng)).collect();
            super::losses::sample_latent(mu, lv, &noise).expect("equal widths")
        };
        b.z1 = draw(&b.mu1, &b.logvar1);
        b.z2 = draw(&b.mu2, &b.logvar2);
        Ok(b)
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.config.latent_dim() {
            return Err(Error::usage(format!(
                "latent width {} != {}",
                z.len(),
                self.config.latent_dim()
            )));
        }
        Ok(())
    }

    pub fn decoder_start(&self, z: &[f64]) -> Result<DecoderState> {
        self.check_latent(z)?;
        let c = self.parts.dec_init.apply(&self.store, z);
        let h = c.iter().map(|x| x.tanh()).collect();
        Ok(DecoderState { h, c })
    }

    /// Feeds `token` and returns the next state with log-probabilities over the vocabulary.
    pub fn decoder_step(&self, state: &DecoderState, token: usize, z: &[f64]) -> Result<(DecoderState, Vec<f64>)> {
        self.check_latent(z)?;
        if token >= self.config.vocab_size {
            return Err(Error::usage(format!("token id {token} out of vocabulary")));
        }
        let p = &self.parts;
        let x: Vec<f64> = self.store.get(p.dec_embed).row(token).iter().chain(z).copied().collect();
        let (h, c) = p.dec.step(&self.store, &x, &state.h, &state.c);
        let logits = p.dec_out.apply(&self.store, &h);
        Ok((DecoderState { h, c }, log_softmax(&logits)))
    }

    /// Teacher-forced `−log p(x | z)` of `tokens` framed with `<s>`/`</s>`.
    pub fn sequence_nll(&self, z: &[f64], tokens: &[usize]) -> Result<f64> {
        let mut state = self.decoder_start(z)?;
        let mut prev = BOS;
        let mut nll = 0.0;
        for &t in tokens.iter().chain(std::iter::once(&EOS)) {
            let (next, lp) = self.decoder_step(&state, prev, z)?;
            let target = lp
                .get(t)
                .ok_or_else(|| Error::usage(format!("token id {t} out of vocabulary")))?;
            nll -= target;
            state = next;
            prev = t;
        }
        Ok(nll)
    }

    /// Builds the objective for one batch on `tape`.
    pub fn forward_loss<R: Rng>(
        &self,
        tape: &mut Tape,
        input: BatchInput<'_>,
        weights: LossWeights,
        mode: ForwardMode,
        rng: &mut R,
    ) -> Result<LossVars> {
        let batch = input.batch;
        let b = batch.size();
        let inv_b = 1.0 / b as f64;

        let mut z_parts = Vec::with_capacity(2);
        let (mut kl1, mut reg, mut srec) = (None, None, None);
        if let Some(s) = self.parts.structured {
            let d = self.config.embed_dim;
            if input.reps.len() != b * d {
                return Err(Error::usage(format!(
                    "{} representation values for a batch of {b} at width {d}",
                    input.reps.len()
                )));
            }
            let basis = tape.param(&self.store, s.basis);
            let reps = tape.constant(b, d, input.reps.to_vec());
            let (h, lv1) = self.structured_tape(tape, &s, reps)?;
            let mu1 = self.simplex_tape(tape, &s, h, basis)?;
            let z1 = self.sample_tape(tape, mu1, lv1, mode.sample, rng)?;
            z_parts.push(z1);
            let kl = kl_gaussian_tape(tape, mu1, lv1)?;
            let kl = tape.sum(kl);
            kl1 = Some(tape.scale(kl, inv_b));
            if weights.use_reg {
                reg = Some(reg_loss_tape(tape, basis, self.config.alpha)?);
            }
            if weights.use_srec {
                if input.m == 0 || input.neg_reps.len() != b * input.m * d {
                    return Err(Error::usage(format!(
                        "{} negative representation values for batch {b}, m = {}",
                        input.neg_reps.len(),
                        input.m
                    )));
                }
                let neg = tape.constant(b * input.m, d, input.neg_reps.to_vec());
                let (neg_h, _) = self.structured_tape(tape, &s, neg)?;
                let neg_mu = self.simplex_tape(tape, &s, neg_h, basis)?;
                srec = Some(s_rec_loss_tape(tape, h, mu1, neg_mu, input.m)?);
            }
        }

        let (mu2, lv2) = self.unstructured_tape(tape, batch)?;
        let z2 = self.sample_tape(tape, mu2, lv2, mode.sample, rng)?;
        z_parts.push(z2);
        let kl = kl_gaussian_tape(tape, mu2, lv2)?;
        let kl = tape.sum(kl);
        let kl2 = tape.scale(kl, inv_b);

        let z = if z_parts.len() == 1 { z_parts[0] } else { tape.concat_cols(&z_parts)? };
        let rec = self.decoder_tape(tape, batch, z, mode.dropout, rng)?;
        let rec = tape.sum(rec);
        let rec = tape.scale(rec, inv_b);

        let mut total = rec;
        if let Some(k1) = kl1 {
            let t = tape.scale(k1, weights.beta1);
            total = tape.add(total, t)?;
        }
        let t = tape.scale(kl2, weights.beta2);
        total = tape.add(total, t)?;
        for extra in [reg, srec].into_iter().flatten() {
            total = tape.add(total, extra)?;
        }
        Ok(LossVars {
            total,
            rec,
            kl1,
            kl2,
            reg,
            srec,
        })
    }

    fn structured_tape(&self, tape: &mut Tape, s: &Structured, reps: Var) -> Result<(Var, Var)> {
        let hidden = s.mlp.forward(tape, &self.store, reps)?;
        let hidden = tape.tanh(hidden);
        let h = s.h_head.forward(tape, &self.store, hidden)?;
        let lv = s.logvar_head.forward(tape, &self.store, hidden)?;
        let lv = tape.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
        Ok((h, lv))
    }

    fn simplex_tape(&self, tape: &mut Tape, s: &Structured, h: Var, basis: Var) -> Result<Var> {
        let logits = s.proj.forward(tape, &self.store, h)?;
        let p = tape.softmax_rows(logits);
        let et = tape.transpose(basis);
        tape.matmul(p, et)
    }

    fn unstructured_tape(&self, tape: &mut Tape, batch: &Batch) -> Result<(Var, Var)> {
        let p = &self.parts;
        let b = batch.size();
        let hd = self.config.enc_hidden;
        let embed = tape.param(&self.store, p.enc_embed);
        let cell = p.enc.bind(tape, &self.store);
        let mut h = tape.constant(b, hd, vec![0.0; b * hd]);
        let mut c = tape.constant(b, hd, vec![0.0; b * hd]);
        for t in 0..batch.max_len {
            let x = tape.gather(embed, &batch.token_column(t), 1)?;
            let (hn, cn) = lstm_step(tape, x, h, c, &cell)?;
            let mask = batch.token_mask(t);
            if mask.iter().all(|&m| m == 1.0) {
                h = hn;
                c = cn;
            } else {
                let mask = tape.constant(b, 1, mask);
                h = masked_update(tape, h, hn, mask)?;
                c = masked_update(tape, c, cn, mask)?;
            }
        }
        let mu = p.mu_head.forward(tape, &self.store, h)?;
        let lv = p.logvar_head.forward(tape, &self.store, h)?;
        let lv = tape.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
        Ok((mu, lv))
    }

    fn sample_tape<R: Rng>(&self, tape: &mut Tape, mu: Var, lv: Var, sample: bool, rng: &mut R) -> Result<Var> {
        if !sample {
            return Ok(mu);
        }
        let (r, c) = tape.shape(mu);
        let noise: Vec<f64> = (0..r * c).map(|_| StandardNormal.sample(rng)).collect();
        let noise = tape.constant(r, c, noise);
        let half = tape.scale(lv, 0.5);
        let std = tape.exp(half);
        let scaled = tape.mul(std, noise)?;
        tape.add(mu, scaled)
    }

    fn dropout<R: Rng>(&self, tape: &mut Tape, x: Var, on: bool, rng: &mut R) -> Result<Var> {
        let p = self.config.dropout;
        if !on || p == 0.0 {
            return Ok(x);
        }
        let (r, c) = tape.shape(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = tape.constant(r, c, mask);
        tape.mul(x, mask)
    }

    /// Per-row summed cross-entropy `[B, 1]` under teacher forcing.
    fn decoder_tape<R: Rng>(&self, tape: &mut Tape, batch: &Batch, z: Var, dropout: bool, rng: &mut R) -> Result<Var> {
        let p = &self.parts;
        let embed = tape.param(&self.store, p.dec_embed);
        let init: LinearVars = p.dec_init.bind(tape, &self.store);
        let out: LinearVars = p.dec_out.bind(tape, &self.store);
        let cell = p.dec.bind(tape, &self.store);
        let mut c = init.forward(tape, z)?;
        let mut h = tape.tanh(c);
        let mut total: Option<Var> = None;
        for t in 0..batch.decoder_steps() {
            let targets = batch.decoder_target_column(t);
            if targets.iter().all(Option::is_none) {
                break;
            }
            let x = tape.gather(embed, &batch.decoder_input_column(t), 1)?;
            let x = self.dropout(tape, x, dropout, rng)?;
            let x = tape.concat_cols(&[x, z])?;
            (h, c) = lstm_step(tape, x, h, c, &cell)?;
            let o = self.dropout(tape, h, dropout, rng)?;
            let logits = out.forward(tape, o)?;
            let ce = tape.cross_entropy(logits, &targets)?;
            total = Some(match total {
                None => ce,
                Some(acc) => tape.add(acc, ce)?,
            });
        }
        total.ok_or_else(|| Error::usage("batch has no decoder targets"))
    }

    /// Rebuilds a model of the given architecture with all parameters zeroed,
    /// ready to be overwritten from a checkpoint.
    pub(crate) fn skeleton(config: ModelConfig) -> Result<Self> {
        let table = match config.mode {
            ModelMode::Cpvae => Some(EmbeddingTable::from_matrix(
                vec![0.0; config.vocab_size * config.embed_dim],
                config.embed_dim,
                0,
            )?),
            ModelMode::BetaVaeBaseline => None,
        };
        let mut config = config;
        let init = config.basis_init;
        config.basis_init = BasisInit::Gaussian;
        let mut model = Self::new(config, table.as_ref(), 0)?;
        model.config.basis_init = init;
        Ok(model)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numeric::finite_diff_check;
    use crate::text::toy::{sentiment_corpus, synthetic_embeddings};
    use crate::text::{Corpus, Vocabulary};

    pub(crate) fn tiny_config(vocab_size: usize, embed_dim: usize) -> ModelConfig {
        ModelConfig {
            mode: ModelMode::Cpvae,
            vocab_size,
            embed_dim,
            k: 3,
            alpha: 4.0,
            z1_dim: 4,
            z2_dim: 3,
            mlp_hidden: 5,
            enc_input: 3,
            enc_hidden: 4,
            dec_input: 3,
            dec_hidden: 4,
            dropout: 0.5,
            basis_init: BasisInit::Gaussian,
        }
    }

    pub(crate) fn fixture() -> (CpVaeModel, Corpus) {
        let c = sentiment_corpus(12, 0);
        let vocab = Vocabulary::build(&c.lines, None, 1).unwrap();
        let table = synthetic_embeddings(&vocab, 6, 1).unwrap();
        let corpus = Corpus::from_lines(&c.lines, &vocab, Some(c.labels)).unwrap();
        let model = CpVaeModel::new(tiny_config(vocab.len(), 6), Some(&table), 7).unwrap();
        (model, corpus)
    }

    fn reps(model: &CpVaeModel, corpus: &Corpus, idx: &[usize]) -> Vec<f64> {
        idx.iter().flat_map(|&i| model.sentence_rep(corpus.sentence(i)).unwrap()).collect()
    }

    const W: LossWeights = LossWeights {
        beta1: 0.2,
        beta2: 0.35,
        use_reg: true,
        use_srec: true,
    };

    #[test]
    fn zero_mlp_gives_bias() {
        let (mut model, _) = fixture();
        let s = model.parts.structured.unwrap();
        for id in [s.mlp.weight, s.h_head.weight] {
            model.store_mut().get_mut(id).values_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let rep = vec![0.3; 6];
        let (h, lv) = model.encode_structured(&rep).unwrap();
        assert_eq!(h, model.store().get(s.h_head.bias).values());
        assert_eq!((h.len(), lv.len()), (4, 4));
        assert!(model.encode_structured(&[0.0; 5]).is_err());
    }

    #[test]
    fn simplex_uniform_and_vertex() {
        let (mut model, _) = fixture();
        let s = model.parts.structured.unwrap();
        for id in s.proj.params() {
            model.store_mut().get_mut(id).values_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let (p, mu) = model.map_to_simplex(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let e = model.basis().unwrap();
        for (r, m) in mu.iter().enumerate() {
            let mean = (e[r * 3] + e[r * 3 + 1] + e[r * 3 + 2]) / 3.0;
            assert!((m - mean).abs() < 1e-12);
        }
        model.store_mut().get_mut(s.proj.bias).values_mut()[1] = 1e4;
        let (_, mu) = model.map_to_simplex(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(mu, model.basis_vector(1).unwrap());
    }

    #[test]
    fn orthogonal_basis_factorises_norm() {
        let (mut model, _) = fixture();
        model.orthogonalize_basis().unwrap();
        assert!(model.reg_value().unwrap() < 1e-12);
        let p = [0.2, 0.5, 0.3];
        let mu = model.simplex_point(&p).unwrap();
        let norm2: f64 = mu.iter().map(|x| x * x).sum();
        let sq: f64 = p.iter().map(|x| x * x).sum();
        assert!((norm2 - 4.0 * sq).abs() < 1e-9);
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let (model, corpus) = fixture();
        let idx = [0, 3, 5];
        let batch = Batch::from_indices(&corpus, &idx).unwrap();
        let r = reps(&model, &corpus, &idx);
        let mut tape = Tape::new();
        let s = model.parts.structured.unwrap();
        let rv = tape.constant(3, 6, r);
        let basis = tape.param(model.store(), s.basis);
        let (h, _) = model.structured_tape(&mut tape, &s, rv).unwrap();
        let mu1 = model.simplex_tape(&mut tape, &s, h, basis).unwrap();
        let (mu2, _) = model.unstructured_tape(&mut tape, &batch).unwrap();
        for (row, &i) in idx.iter().enumerate() {
            let b = model.encode(corpus.sentence(i)).unwrap();
            for (a, x) in tape.value(mu1)[row * 4..(row + 1) * 4].iter().zip(&b.mu1) {
                assert!((a - x).abs() < 1e-12);
            }
            for (a, x) in tape.value(mu2)[row * 3..(row + 1) * 3].iter().zip(&b.mu2) {
                assert!((a - x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reconstruction_matches_sequence_nll() {
        let (model, corpus) = fixture();
        let idx = [1, 2, 4, 7];
        let batch = Batch::from_indices(&corpus, &idx).unwrap();
        let r = reps(&model, &corpus, &idx);
        let mut tape = Tape::new();
        let w = LossWeights { use_srec: false, ..W };
        let input = BatchInput { batch: &batch, reps: &r, neg_reps: &[], m: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = model.forward_loss(&mut tape, input, w, ForwardMode::EVAL, &mut rng).unwrap();
        let expected: f64 = idx
            .iter()
            .map(|&i| {
                let b = model.encode(corpus.sentence(i)).unwrap();
                model.sequence_nll(&b.z(), corpus.sentence(i)).unwrap()
            })
            .sum::<f64>()
            / idx.len() as f64;
        assert!((tape.scalar_value(loss.rec) - expected).abs() < 1e-10);
    }

    #[test]
    fn dropout_only_in_training_mode() {
        let (model, corpus) = fixture();
        let batch = Batch::from_indices(&corpus, &[0, 1]).unwrap();
        let r = reps(&model, &corpus, &[0, 1]);
        let input = BatchInput { batch: &batch, reps: &r, neg_reps: &[], m: 0 };
        let w = LossWeights { use_srec: false, ..W };
        let run = |mode, seed| {
            let mut tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = model.forward_loss(&mut tape, input, w, mode, &mut rng).unwrap();
            tape.scalar_value(l.rec)
        };
        let no_drop = ForwardMode { dropout: false, sample: false };
        let drop = ForwardMode { dropout: true, sample: false };
        assert_eq!(run(no_drop, 1), run(no_drop, 2));
        assert_ne!(run(drop, 1), run(no_drop, 1));
    }

    #[test]
    fn plain_autoencoder_when_regularisers_off() {
        let (model, corpus) = fixture();
        let batch = Batch::from_indices(&corpus, &[0, 1]).unwrap();
        let r = reps(&model, &corpus, &[0, 1]);
        let input = BatchInput { batch: &batch, reps: &r, neg_reps: &[], m: 0 };
        let w = LossWeights { beta1: 0.0, beta2: 0.0, use_reg: false, use_srec: false };
        let mut tape = Tape::new();
        let l = model
            .forward_loss(&mut tape, input, w, ForwardMode::EVAL, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(tape.scalar_value(l.total), tape.scalar_value(l.rec));
    }

    #[test]
    fn full_objective_gradient_check() {
        let (mut model, corpus) = fixture();
        let idx = [0, 1];
        let batch = Batch::from_indices(&corpus, &idx).unwrap();
        let r = reps(&model, &corpus, &idx);
        let neg_idx: Vec<usize> = (0..idx.len() * 2).map(|i| (i * 5 + 3) % corpus.len()).collect();
        let nr = reps(&model, &corpus, &neg_idx);
        let params = model.trainable_params();
        let m2 = model.clone();
        // at 1e-5 roundoff dominates entries near the 1e-8 floor
        let report = finite_diff_check(model.store_mut(), &params, 1e-4, |store, tape| {
            let mut m = m2.clone();
            *m.store_mut() = store.clone();
            let input = BatchInput { batch: &batch, reps: &r, neg_reps: &nr, m: 2 };
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let l = m.forward_loss(tape, input, W, ForwardMode::TRAIN, &mut rng)?;
            Ok(l.total)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn baseline_has_two_terms() {
        let (_, corpus) = fixture();
        let mut cfg = tiny_config(corpus.sentences().iter().flatten().max().unwrap() + 1, 6);
        cfg.mode = ModelMode::BetaVaeBaseline;
        cfg.z2_dim = 5;
        let model = CpVaeModel::new(cfg, None, 1).unwrap();
        assert!(model.basis().is_none());
        let batch = Batch::from_indices(&corpus, &[0, 1]).unwrap();
        let input = BatchInput { batch: &batch, reps: &[], neg_reps: &[], m: 0 };
        let mut tape = Tape::new();
        let l = model
            .forward_loss(&mut tape, input, W, ForwardMode::TRAIN, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let v = l.values(&tape);
        assert!(v.kl1.is_none() && v.reg.is_none() && v.srec.is_none());
        assert!((v.total - (v.rec + 0.35 * v.kl2)).abs() < 1e-12);
    }
}
