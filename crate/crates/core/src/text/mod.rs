//! Corpus ingestion, vocabularies, pretrained word vectors and batching.

pub mod corpus;
pub mod embeddings;
pub mod toy;
pub mod vocab;

pub use corpus::{batch_iterator, read_labels, read_lines, Batch, Corpus};
pub use embeddings::{mean_of_rows, sentence_representation, EmbeddingTable};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};
