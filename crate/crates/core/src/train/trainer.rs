use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::log::{EpochRecord, TrainLog};
use crate::error::{Error, Result};
use crate::model::{BatchInput, CpVaeModel, ForwardMode, LossBreakdown};
use crate::numeric::{Optimizer, ParamId, Tape};
use crate::text::{batch_iterator, Batch, Corpus, EmbeddingTable};

/// Result of [`train`]: the parameters from the epoch with the lowest
/// reconstruction loss and the full log.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: CpVaeModel,
    pub log: TrainLog,
    pub best_epoch: usize,
}

/// Model, optimizers and random streams for one training run.
pub struct Trainer<'a> {
    config: TrainConfig,
    corpus: &'a Corpus,
    model: CpVaeModel,
    encoder_opt: Optimizer,
    decoder_opt: Optimizer,
    trainable: Vec<ParamId>,
    reps: Vec<f64>,
    rng: ChaCha8Rng,
}

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64 + 1)
}

/// Checks that no parameter is owned by both optimizers.
pub fn audit_optimizer_groups(a: &Optimizer, b: &Optimizer) -> Result<()> {
    let left: HashSet<ParamId> = a.params().iter().copied().collect();
    if let Some(p) = b.params().iter().find(|p| left.contains(p)) {
        return Err(Error::usage(format!("parameter #{} is assigned to both optimizers", p.index())));
    }
    Ok(())
}

impl<'a> Trainer<'a> {
    pub fn new(config: &TrainConfig, corpus: &'a Corpus, vocab_size: usize, table: Option<&EmbeddingTable>) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::Ingestion("training corpus is empty".into()));
        }
        let model = CpVaeModel::new(config.model_config(vocab_size), table, config.seed)?;
        let encoder_opt = Optimizer::new(
            config.encoder_optimizer,
            config.encoder_lr,
            model.encoder_params(),
            model.store(),
        );
        let decoder_opt = Optimizer::new(
            config.decoder_optimizer,
            config.decoder_lr,
            model.decoder_params(),
            model.store(),
        );
        audit_optimizer_groups(&encoder_opt, &decoder_opt)?;
        let reps = if model.is_structured() {
            let mut r = Vec::with_capacity(corpus.len() * config.embed_dim);
            for s in corpus.sentences() {
                r.extend(model.sentence_rep(s)?);
            }
            r
        } else {
            Vec::new()
        };
        Ok(Self {
            config: config.clone(),
            corpus,
            trainable: model.trainable_params(),
            model,
            encoder_opt,
            decoder_opt,
            reps,
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
        })
    }

    pub fn model(&self) -> &CpVaeModel {
        &self.model
    }

    pub fn into_model(self) -> CpVaeModel {
        self.model
    }

    fn batch_reps(&self, batch: &Batch) -> Vec<f64> {
        let d = self.config.embed_dim;
        if self.reps.is_empty() {
            return Vec::new();
        }
        batch
            .indices
            .iter()
            .flat_map(|&i| self.reps[i * d..(i + 1) * d].iter().copied())
            .collect()
    }

    /// Draws `m` negatives per batch row uniformly from the training set.
    fn sample_negatives(&mut self, batch: &Batch) -> Vec<f64> {
        if self.reps.is_empty() || !self.config.use_srec_loss {
            return Vec::new();
        }
        let d = self.config.embed_dim;
        let n = self.corpus.len();
        let mut out = Vec::with_capacity(batch.size() * self.config.negatives * d);
        for _ in 0..batch.size() * self.config.negatives {
            let j = self.rng.random_range(0..n);
            out.extend_from_slice(&self.reps[j * d..(j + 1) * d]);
        }
        out
    }

    fn loss_and_grad(&mut self, batch: &Batch, reps: &[f64], negs: &[f64], epoch: usize) -> Result<LossBreakdown> {
        self.model.store_mut().zero_grad();
        let input = BatchInput {
            batch,
            reps,
            neg_reps: negs,
            m: self.config.negatives,
        };
        let mut tape = Tape::new();
        let weights = self.config.loss_weights(epoch);
        let loss = self
            .model
            .forward_loss(&mut tape, input, weights, ForwardMode::TRAIN, &mut self.rng)?;
        let values = loss.values(&tape);
        if !values.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                stats: format!("{values:?}"),
            });
        }
        tape.backward(loss.total, self.model.store_mut())?;
        Ok(values)
    }

    /// `n_inner` encoder-only updates on `batch`; decoder parameters are not touched.
    pub fn aggressive_encoder_phase(&mut self, batch: &Batch, n_inner: usize, epoch: usize) -> Result<()> {
        let reps = self.batch_reps(batch);
        for _ in 0..n_inner {
            let negs = self.sample_negatives(batch);
            self.loss_and_grad(batch, &reps, &negs, epoch)?;
            let ids = self.encoder_opt.params().to_vec();
            let clip = self.config.grad_clip;
            self.model.store_mut().clip_grad_norm(&ids, clip);
            self.encoder_opt.step(self.model.store_mut())?;
        }
        Ok(())
    }

    /// One joint update of encoders and decoder; returns the batch losses.
    pub fn train_step(&mut self, batch: &Batch, epoch: usize) -> Result<LossBreakdown> {
        if self.config.aggressive_steps > 0 {
            self.aggressive_encoder_phase(batch, self.config.aggressive_steps, epoch)?;
        }
        let reps = self.batch_reps(batch);
        let negs = self.sample_negatives(batch);
        let values = self.loss_and_grad(batch, &reps, &negs, epoch)?;
        let clip = self.config.grad_clip;
        let ids = self.trainable.clone();
        self.model.store_mut().clip_grad_norm(&ids, clip);
        self.encoder_opt.step(self.model.store_mut())?;
        self.decoder_opt.step(self.model.store_mut())?;
        Ok(values)
    }

    /// One pass over the shuffled corpus.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let start = Instant::now();
        let batches = batch_iterator(self.corpus, self.config.batch_size, Some(shuffle_seed(self.config.seed, epoch)))?;
        let mut acc = LossBreakdown::default();
        let (mut kl1, mut reg, mut srec) = (0.0, 0.0, 0.0);
        let mut n = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let v = self.train_step(batch, epoch).map_err(|e| match e {
                Error::Diverged { stats, .. } => Error::Diverged { epoch, batch: bi, stats },
                other => other,
            })?;
            if !self.model.store().all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    stats: format!("non-finite parameters after update; last batch losses {v:?}"),
                });
            }
            let w = batch.size() as f64;
            n += w;
            acc.total += w * v.total;
            acc.rec += w * v.rec;
            acc.kl2 += w * v.kl2;
            kl1 += w * v.kl1.unwrap_or(0.0);
            reg += w * v.reg.unwrap_or(0.0);
            srec += w * v.srec.unwrap_or(0.0);
        }
        let weights = self.config.loss_weights(epoch);
        let structured = self.model.is_structured();
        Ok(EpochRecord {
            epoch,
            rec: acc.rec / n,
            kl1: structured.then_some(kl1 / n),
            kl2: acc.kl2 / n,
            reg: weights.use_reg.then_some(reg / n),
            srec: weights.use_srec.then_some(srec / n),
            total: acc.total / n,
            beta2: weights.beta2,
            wall_time_secs: start.elapsed().as_secs_f64(),
        })
    }
}

/// Trains until the epoch-mean reconstruction loss has not improved for
/// `patience` epochs (or `max_epochs`), keeping the best parameters.
pub fn train<F: FnMut(&EpochRecord)>(
    config: &TrainConfig,
    corpus: &Corpus,
    vocab_size: usize,
    table: Option<&EmbeddingTable>,
    mut on_epoch: F,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, corpus, vocab_size, table)?;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, CpVaeModel)> = None;
    for epoch in 0..config.max_epochs {
        let record = trainer.run_epoch(epoch)?;
        on_epoch(&record);
        let improved = best.as_ref().is_none_or(|(b, _, _)| record.rec < *b);
        if improved {
            best = Some((record.rec, epoch, trainer.model().clone()));
        }
        log.push(record);
        let best_epoch = best.as_ref().map_or(0, |b| b.1);
        if epoch - best_epoch >= config.patience {
            break;
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, log, best_epoch })
}
