use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Token-id sentences with optional aligned class labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    sentences: Vec<Vec<usize>>,
    labels: Option<Vec<usize>>,
}

impl Corpus {
    pub fn new(sentences: Vec<Vec<usize>>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(i) = sentences.iter().position(Vec::is_empty) {
            return Err(Error::Ingestion(format!("sentence {i} is empty")));
        }
        if let Some(l) = &labels {
            if l.len() != sentences.len() {
                return Err(Error::Ingestion(format!(
                    "{} labels for {} sentences",
                    l.len(),
                    sentences.len()
                )));
            }
        }
        Ok(Self { sentences, labels })
    }

    pub fn from_lines<S: AsRef<str>>(lines: &[S], vocab: &Vocabulary, labels: Option<Vec<usize>>) -> Result<Self> {
        let sentences = lines.iter().map(|l| vocab.encode(l.as_ref())).collect();
        Self::new(sentences, labels)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentences(&self) -> &[Vec<usize>] {
        &self.sentences
    }

    pub fn sentence(&self, i: usize) -> &[usize] {
        &self.sentences[i]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            sentences: idx.iter().map(|&i| self.sentences[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Reads non-blank lines of a UTF-8 text file.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if lines.is_empty() {
        return Err(Error::Ingestion(format!("{} contains no sentences", path.display())));
    }
    Ok(lines)
}

/// One integer class id per non-blank line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("bad label `{}`: {e}", l.trim()),
            })
        })
        .collect()
}

/// Padded id matrices for one mini-batch.
///
/// `tokens` is the encoder input (no framing). `decoder_input` starts with
/// `<s>` and `decoder_target` ends with `</s>`; both have `max_len + 1` columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub lengths: Vec<usize>,
    pub max_len: usize,
    pub tokens: Vec<usize>,
    pub decoder_input: Vec<usize>,
    pub decoder_target: Vec<usize>,
}

impl Batch {
    pub fn from_indices(corpus: &Corpus, indices: &[usize]) -> Result<Self> {
        Self::from_sentences(indices.iter().map(|&i| corpus.sentence(i)), indices.to_vec())
    }

    /// Builds a batch from explicit sentences.
    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a [usize]>, indices: Vec<usize>) -> Result<Self> {
        let sents: Vec<&[usize]> = sentences.into_iter().collect();
        if sents.is_empty() {
            return Err(Error::usage("empty batch"));
        }
        if sents.iter().any(|s| s.is_empty()) {
            return Err(Error::usage("batch contains an empty sequence"));
        }
        let max_len = sents.iter().map(|s| s.len()).max().unwrap_or(0);
        Self::padded(&sents, indices, max_len)
    }

    /// Same as [`Batch::from_sentences`] with at least `width` columns.
    pub fn padded(sents: &[&[usize]], indices: Vec<usize>, width: usize) -> Result<Self> {
        let b = sents.len();
        let max_len = width.max(sents.iter().map(|s| s.len()).max().unwrap_or(0));
        let t = max_len + 1;
        let mut tokens = vec![PAD; b * max_len];
        let mut decoder_input = vec![PAD; b * t];
        let mut decoder_target = vec![PAD; b * t];
        for (r, s) in sents.iter().enumerate() {
            tokens[r * max_len..r * max_len + s.len()].copy_from_slice(s);
            decoder_input[r * t] = BOS;
            decoder_input[r * t + 1..r * t + 1 + s.len()].copy_from_slice(s);
            decoder_target[r * t..r * t + s.len()].copy_from_slice(s);
            decoder_target[r * t + s.len()] = EOS;
        }
        Ok(Self {
            indices,
            lengths: sents.iter().map(|s| s.len()).collect(),
            max_len,
            tokens,
            decoder_input,
            decoder_target,
        })
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    /// Encoder token ids at position `t` for every row.
    pub fn token_column(&self, t: usize) -> Vec<usize> {
        (0..self.size()).map(|r| self.tokens[r * self.max_len + t]).collect()
    }

    pub fn decoder_steps(&self) -> usize {
        self.max_len + 1
    }

    pub fn decoder_input_column(&self, t: usize) -> Vec<usize> {
        let w = self.decoder_steps();
        (0..self.size()).map(|r| self.decoder_input[r * w + t]).collect()
    }

    /// Target ids at step `t`; `None` past each row's `</s>`.
    pub fn decoder_target_column(&self, t: usize) -> Vec<Option<usize>> {
        (0..self.size())
            .map(|r| (t <= self.lengths[r]).then(|| self.decoder_target[r * self.decoder_steps() + t]))
            .collect()
    }

    /// 1.0 for rows still inside their sequence at encoder position `t`.
    pub fn token_mask(&self, t: usize) -> Vec<f64> {
        self.lengths.iter().map(|&l| if t < l { 1.0 } else { 0.0 }).collect()
    }
}

/// Splits the corpus into batches. With a seed, the order is a seeded
/// shuffle; without one, corpus order.
pub fn batch_iterator(corpus: &Corpus, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    if corpus.is_empty() {
        return Err(Error::Ingestion("cannot batch an empty corpus".into()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|idx| Batch::from_indices(corpus, idx))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> Corpus {
        let sentences = (0..n).map(|i| vec![4 + i % 5; 1 + i % 7]).collect();
        Corpus::new(sentences, None).unwrap()
    }

    #[test]
    fn batch_sizes() {
        let c = corpus(70);
        let batches = batch_iterator(&c, 32, Some(1)).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Batch::size).collect();
        assert_eq!(sizes, vec![32, 32, 6]);
    }

    #[test]
    fn seeded_shuffle_is_reproducible() {
        let c = corpus(50);
        let a = batch_iterator(&c, 8, Some(9)).unwrap();
        let b = batch_iterator(&c, 8, Some(9)).unwrap();
        assert_eq!(a, b);
        let other = batch_iterator(&c, 8, Some(10)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn lengths_and_framing() {
        let c = Corpus::new(vec![vec![5, 6, 7], vec![8]], None).unwrap();
        let b = batch_iterator(&c, 2, None).unwrap().remove(0);
        assert_eq!(b.lengths, vec![3, 1]);
        assert_eq!(b.tokens, vec![5, 6, 7, 8, PAD, PAD]);
        assert_eq!(b.decoder_input, vec![BOS, 5, 6, 7, BOS, 8, PAD, PAD]);
        assert_eq!(b.decoder_target, vec![5, 6, 7, EOS, 8, EOS, PAD, PAD]);
        assert_eq!(b.decoder_target_column(2), vec![Some(7), None]);
        assert_eq!(b.token_mask(1), vec![1.0, 0.0]);
    }

    #[test]
    fn misaligned_labels_rejected() {
        assert!(Corpus::new(vec![vec![4]], Some(vec![0, 1])).is_err());
        assert!(Corpus::new(vec![vec![]], None).is_err());
        assert!(batch_iterator(&corpus(3), 0, None).is_err());
    }
}
