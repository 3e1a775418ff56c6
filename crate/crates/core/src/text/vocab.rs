use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token ↔ id mapping with reserved ids `0..4` for `<pad>`, `<s>`, `</s>`, `<unk>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from whitespace-tokenized sentences. Tokens are
    /// ranked by descending frequency with lexicographic tie-break; `max_size`
    /// counts the reserved entries.
    pub fn build<S: AsRef<str>>(sentences: &[S], max_size: Option<usize>, min_freq: usize) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for s in sentences {
            for tok in s.as_ref().split_whitespace() {
                any = true;
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !any {
            return Err(Error::Ingestion("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(tok, c)| *c >= min_freq.max(1) && !RESERVED.contains(tok))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let room = max_size.map_or(usize::MAX, |m| m.saturating_sub(RESERVED.len()));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(room).map(|(t, _)| t.to_string()));
        Ok(Self::from_tokens(tokens))
    }

    /// Rebuilds a vocabulary from its id-ordered token list (reserved entries first).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let id_to_token: Vec<String> = tokens.into_iter().collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.id_to_token.get(id).map_or("<unk>", String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        sentence.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Joins tokens with single spaces, stopping at `</s>` and skipping `<pad>`/`<s>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// SHA-256 over the id-ordered token list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.id_to_token {
            h.update(t.as_bytes());
            h.update([b'\n']);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order() {
        let v = Vocabulary::build(&["a b", "a"], None, 1).unwrap();
        assert_eq!(&v.tokens()[..4], &RESERVED.map(String::from));
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn lexicographic_tie_break() {
        let v = Vocabulary::build(&["z y x", "y z"], None, 1).unwrap();
        assert_eq!(&v.tokens()[4..], &["y", "z", "x"]);
    }

    #[test]
    fn min_freq_sends_rare_tokens_to_unk() {
        let v = Vocabulary::build(&["a b", "a"], None, 2).unwrap();
        assert_eq!(v.get("b"), None);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn max_size_counts_reserved() {
        let v = Vocabulary::build(&["a b", "a"], Some(4), 1).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("a"), UNK);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty: [&str; 2] = ["", "   "];
        assert!(matches!(Vocabulary::build(&empty, None, 1), Err(Error::Ingestion(_))));
    }

    #[test]
    fn decode_stops_at_eos() {
        let v = Vocabulary::build(&["a b"], None, 1).unwrap();
        assert_eq!(v.decode(&[BOS, 4, 5, EOS, 4]), "a b");
    }
}
