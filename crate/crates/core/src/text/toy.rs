//! Templated toy corpora with GloVe-like synthetic word vectors.
//!
//! The sentiment corpus mimics short restaurant reviews: every sentence is
//! filled from a template with nouns and adjectives of a single polarity.
//! Labels are `0 = negative`, `1 = positive`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::embeddings::EmbeddingTable;
use super::vocab::{Vocabulary, PAD};
use crate::error::Result;

pub const NEGATIVE: usize = 0;
pub const POSITIVE: usize = 1;

/// Default desk-scale experiment: training and held-out corpus sizes and
/// seeds, and the seed of the synthetic word vectors.
pub const TRAIN_SIZE: usize = 2000;
pub const TRAIN_SEED: u64 = 11;
pub const HELDOUT_SIZE: usize = 200;
pub const HELDOUT_SEED: u64 = 99;
pub const EMBED_SEED: u64 = 3;

const NOUNS: &[&str] = &[
    "food", "pizza", "pasta", "burger", "salad", "soup", "staff", "service", "waiter", "coffee",
    "steak", "sushi", "bread", "dessert", "menu", "place", "owner", "wine", "beer", "fries",
    "chicken", "rice", "noodles", "tacos", "sandwich", "patio", "music", "price", "cake", "breakfast",
];

const POSITIVE_ADJ: &[&str] = &[
    "great", "delicious", "amazing", "friendly", "excellent", "fantastic", "wonderful", "tasty",
    "fresh", "awesome", "perfect", "lovely", "superb", "incredible", "outstanding", "helpful",
    "pleasant", "cozy", "yummy", "terrific", "brilliant", "attentive", "flavorful", "charming", "gorgeous",
];

const NEGATIVE_ADJ: &[&str] = &[
    "terrible", "awful", "horrible", "rude", "bland", "disgusting", "bad", "cold", "stale", "greasy",
    "slow", "dirty", "poor", "mediocre", "nasty", "gross", "overpriced", "soggy", "burnt", "dull",
    "unfriendly", "lousy", "salty", "dreadful", "inedible",
];

const INTENSIFIERS: &[&str] = &["really", "very", "so", "quite", "truly", "pretty"];

const POSITIVE_VERBS: &[&str] = &["loved", "enjoyed", "adored", "liked", "recommend"];

const NEGATIVE_VERBS: &[&str] = &["hated", "disliked", "regretted", "avoided", "loathed"];

// Most templates carry several sentiment words so that the label is worth
// encoding for reconstruction, not just for the bag-of-words encoder.
const TEMPLATES: &[&str] = &[
    "the N was A .",
    "the N was I A and the N was A .",
    "i V the N , it was I A .",
    "we V the N and the N was A .",
    "my N came out A and A .",
    "this N is I A ! i V it .",
    "the N and the N were both A .",
    "i V this place , the N was A and A .",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum WordClass {
    Noun,
    Positive,
    Negative,
    Intensifier,
    Function,
    Topic(usize),
}

/// Sentences with aligned integer labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledLines {
    pub lines: Vec<String>,
    pub labels: Vec<usize>,
}

/// Balanced templated sentiment corpus of `n` sentences.
pub fn sentiment_corpus(n: usize, seed: u64) -> LabeledLines {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = LabeledLines {
        lines: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
    };
    for i in 0..n {
        let label = if i % 2 == 0 { POSITIVE } else { NEGATIVE };
        let (adjectives, verbs) = if label == POSITIVE {
            (POSITIVE_ADJ, POSITIVE_VERBS)
        } else {
            (NEGATIVE_ADJ, NEGATIVE_VERBS)
        };
        let template = TEMPLATES.choose(&mut rng).expect("templates");
        let words: Vec<&str> = template
            .split(' ')
            .map(|slot| match slot {
                "N" => *NOUNS.choose(&mut rng).expect("nouns"),
                "A" => *adjectives.choose(&mut rng).expect("adjectives"),
                "I" => *INTENSIFIERS.choose(&mut rng).expect("intensifiers"),
                "V" => *verbs.choose(&mut rng).expect("verbs"),
                w => w,
            })
            .collect();
        out.lines.push(words.join(" "));
        out.labels.push(label);
    }
    out
}

const TOPIC_WORDS: &[&[&str]] = &[
    &["government", "minister", "election", "president", "treaty", "border", "parliament", "embassy"],
    &["team", "coach", "season", "match", "league", "striker", "playoff", "champion"],
    &["company", "shares", "profit", "market", "investors", "merger", "earnings", "bank"],
    &["software", "internet", "computer", "researchers", "chip", "network", "satellite", "browser"],
];

const TOPIC_TEMPLATES: &[&str] = &[
    "the T said the T will T on monday .",
    "a new T report on the T and the T .",
    "officials say the T T is expected to grow .",
    "the T announced a T after the T .",
];

/// Templated four-topic news-like corpus; label = topic index.
pub fn topic_corpus(n: usize, seed: u64) -> LabeledLines {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = LabeledLines {
        lines: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
    };
    for i in 0..n {
        let topic = i % TOPIC_WORDS.len();
        let template = TOPIC_TEMPLATES.choose(&mut rng).expect("templates");
        let words: Vec<&str> = template
            .split(' ')
            .map(|slot| match slot {
                "T" => *TOPIC_WORDS[topic].choose(&mut rng).expect("topic words"),
                w => w,
            })
            .collect();
        out.lines.push(words.join(" "));
        out.labels.push(topic);
    }
    out
}

fn word_class(token: &str) -> WordClass {
    if NOUNS.contains(&token) {
        WordClass::Noun
    } else if POSITIVE_ADJ.contains(&token) || POSITIVE_VERBS.contains(&token) {
        WordClass::Positive
    } else if NEGATIVE_ADJ.contains(&token) || NEGATIVE_VERBS.contains(&token) {
        WordClass::Negative
    } else if INTENSIFIERS.contains(&token) {
        WordClass::Intensifier
    } else if let Some(t) = TOPIC_WORDS.iter().position(|ws| ws.contains(&token)) {
        WordClass::Topic(t)
    } else {
        WordClass::Function
    }
}

fn class_slot(c: WordClass) -> usize {
    match c {
        WordClass::Noun => 0,
        WordClass::Positive => 1,
        WordClass::Negative => 2,
        WordClass::Intensifier => 3,
        WordClass::Function => 4,
        WordClass::Topic(t) => 5 + t,
    }
}

fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Word vectors where words of the same lexical class share a unit-norm
/// centroid plus isotropic noise of norm ≈ 0.5, the way pretrained vectors
/// cluster semantically similar words.
pub fn synthetic_embeddings(vocab: &Vocabulary, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids: Vec<Vec<f64>> = (0..5 + TOPIC_WORDS.len()).map(|_| random_unit(dim, &mut rng)).collect();
    let noise = 0.5 / (dim as f64).sqrt();
    let mut matrix = Vec::with_capacity(vocab.len() * dim);
    for (id, tok) in vocab.tokens().iter().enumerate() {
        if id == PAD {
            matrix.extend(std::iter::repeat_n(0.0, dim));
            continue;
        }
        let c = &centroids[class_slot(word_class(tok))];
        for &ci in c {
            let e: f64 = StandardNormal.sample(&mut rng);
            matrix.push(ci + noise * e);
        }
    }
    EmbeddingTable::from_matrix(matrix, dim, seed)
}
