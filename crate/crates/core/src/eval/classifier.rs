//! Small convolutional sentence classifier used to score transferred text.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::checkpoint::{read_arrays, restore_arrays, write_arrays};
use crate::numeric::nn::normal_tensor;
use crate::numeric::{Linear, Optimizer, ParamId, ParamStore, Tape, Var};
use crate::text::PAD;

pub const FILTER_WIDTHS: [usize; 3] = [3, 4, 5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub embed_dim: usize,
    /// Feature maps per filter width.
    pub filters: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            filters: 16,
            epochs: 8,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    vocab_size: usize,
    num_classes: usize,
    config: ClassifierConfig,
}

pub struct Classifier {
    vocab_size: usize,
    num_classes: usize,
    config: ClassifierConfig,
    store: ParamStore,
    embed: ParamId,
    convs: Vec<Linear>,
    head: Linear,
}

/// Right-pads to the widest filter so every sentence has at least one window.
fn padded(tokens: &[usize], vocab_size: usize) -> Vec<usize> {
    let w = FILTER_WIDTHS[FILTER_WIDTHS.len() - 1];
    let mut t: Vec<usize> = tokens.iter().map(|&i| if i < vocab_size { i } else { crate::text::UNK }).collect();
    while t.len() < w {
        t.push(PAD);
    }
    t
}

impl Classifier {
    fn build(vocab_size: usize, num_classes: usize, config: ClassifierConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let embed = store.add("cls.embed", normal_tensor(vec![vocab_size, config.embed_dim], 0.1, &mut rng));
        let convs = FILTER_WIDTHS
            .iter()
            .map(|&w| Linear::new(&mut store, &format!("cls.conv{w}"), w * config.embed_dim, config.filters, &mut rng))
            .collect();
        let head = Linear::new(
            &mut store,
            "cls.head",
            FILTER_WIDTHS.len() * config.filters,
            num_classes,
            &mut rng,
        );
        Self {
            vocab_size,
            num_classes,
            config,
            store,
            embed,
            convs,
            head,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.embed];
        for c in &self.convs {
            p.extend(c.params());
        }
        p.extend(self.head.params());
        p
    }

    /// Logits `[B, classes]` for a batch of sentences.
    fn logits(&self, tape: &mut Tape, batch: &[&[usize]]) -> Result<Var> {
        let embed = tape.param(&self.store, self.embed);
        let seqs: Vec<Vec<usize>> = batch.iter().map(|s| padded(s, self.vocab_size)).collect();
        let mut pooled = Vec::with_capacity(self.convs.len());
        for (conv, &w) in self.convs.iter().zip(&FILTER_WIDTHS) {
            let mut idx = Vec::new();
            let mut segs = Vec::with_capacity(seqs.len());
            for s in &seqs {
                let n = s.len() + 1 - w;
                for start in 0..n {
                    idx.extend_from_slice(&s[start..start + w]);
                }
                segs.push(n);
            }
            let windows = tape.gather(embed, &idx, w)?;
            let feat = conv.forward(tape, &self.store, windows)?;
            let feat = tape.relu(feat);
            pooled.push(tape.max_pool_segments(feat, &segs)?);
        }
        let h = tape.concat_cols(&pooled)?;
        self.head.forward(tape, &self.store, h)
    }

    pub fn classify(&self, tokens: &[usize]) -> Result<usize> {
        Ok(self.classify_batch(&[tokens.to_vec()])?[0])
    }

    /// Arg-max label per sentence; ties go to the lower label.
    pub fn classify_batch(&self, sentences: &[Vec<usize>]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(256) {
            let mut tape = Tape::new();
            let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
            let l = self.logits(&mut tape, &refs)?;
            for row in tape.value(l).chunks(self.num_classes) {
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }

    /// Percentage of `sentences` classified as their label.
    pub fn accuracy(&self, sentences: &[Vec<usize>], labels: &[usize]) -> Result<f64> {
        if sentences.len() != labels.len() || sentences.is_empty() {
            return Err(Error::usage("sentences and labels must be non-empty and aligned"));
        }
        let pred = self.classify_batch(sentences)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(100.0 * hits as f64 / labels.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_value(Header {
            kind: "classifier".into(),
            vocab_size: self.vocab_size,
            num_classes: self.num_classes,
            config: self.config.clone(),
        })?;
        let mut buf = Vec::new();
        write_arrays(&mut buf, &header, &self.store)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (header, arrays) = read_arrays(bytes.as_slice())?;
        let h: Header = serde_json::from_value(header)?;
        if h.kind != "classifier" {
            return Err(Error::Checkpoint(format!("expected a classifier file, found `{}`", h.kind)));
        }
        let mut c = Self::build(h.vocab_size, h.num_classes, h.config);
        restore_arrays(&mut c.store, arrays)?;
        Ok(c)
    }
}

/// Trains on `(sentences, labels)` with Adam and mean cross-entropy.
/// Labels must cover at least two distinct classes.
pub fn train_classifier(
    sentences: &[Vec<usize>],
    labels: &[usize],
    vocab_size: usize,
    config: ClassifierConfig,
) -> Result<Classifier> {
    if sentences.len() != labels.len() || sentences.is_empty() {
        return Err(Error::usage("sentences and labels must be non-empty and aligned"));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::usage("classifier training needs at least two classes"));
    }
    if config.batch_size == 0 || config.filters == 0 || config.embed_dim == 0 {
        return Err(Error::usage("classifier sizes must be positive"));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut c = Classifier::build(vocab_size, num_classes, config);
    let mut opt = Optimizer::adam(c.config.learning_rate, c.params(), &c.store);
    let mut rng = ChaCha8Rng::seed_from_u64(c.config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    for _ in 0..c.config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(c.config.batch_size) {
            let batch: Vec<&[usize]> = chunk.iter().map(|&i| sentences[i].as_slice()).collect();
            let targets: Vec<Option<usize>> = chunk.iter().map(|&i| Some(labels[i])).collect();
            let mut tape = Tape::new();
            let logits = c.logits(&mut tape, &batch)?;
            let ce = tape.cross_entropy(logits, &targets)?;
            let loss = tape.mean(ce);
            c.store.zero_grad();
            tape.backward(loss, &mut c.store)?;
            opt.step(&mut c.store)?;
        }
    }
    Ok(c)
}

/// Percentage of `transferred` sentences the classifier assigns to their target label.
pub fn transfer_accuracy(transferred: &[Vec<usize>], targets: &[usize], classifier: &Classifier) -> Result<f64> {
    classifier.accuracy(transferred, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::toy::sentiment_corpus;
    use crate::text::Vocabulary;

    fn data(seed: u64, vocab: Option<&Vocabulary>) -> (Vocabulary, Vec<Vec<usize>>, Vec<usize>) {
        let c = sentiment_corpus(400, seed);
        let v = vocab.cloned().unwrap_or_else(|| Vocabulary::build(&c.lines, None, 1).unwrap());
        let s = c.lines.iter().map(|l| v.encode(l)).collect();
        (v, s, c.labels)
    }

    #[test]
    fn separable_corpus_and_round_trip() {
        let (v, s, l) = data(1, None);
        let cfg = ClassifierConfig::default();
        let c = train_classifier(&s, &l, v.len(), cfg).unwrap();
        let (_, hs, hl) = data(2, Some(&v));
        let acc = c.accuracy(&hs, &hl).unwrap();
        assert!(acc >= 95.0, "held-out accuracy {acc}");
        assert_eq!(c.classify_batch(&hs).unwrap(), c.classify_batch(&hs).unwrap());

        let flipped: Vec<usize> = hl.iter().map(|x| 1 - x).collect();
        let ac = transfer_accuracy(&hs, &flipped, &c).unwrap();
        assert!((ac - (100.0 - acc)).abs() < 1e-9);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cls.bin");
        c.save(&p).unwrap();
        let back = Classifier::load(&p).unwrap();
        assert_eq!(back.classify_batch(&hs).unwrap(), c.classify_batch(&hs).unwrap());
    }

    #[test]
    fn single_class_rejected() {
        let s = vec![vec![4, 5], vec![5, 6]];
        assert!(train_classifier(&s, &[1, 1], 8, ClassifierConfig::default()).is_err());
    }
}
