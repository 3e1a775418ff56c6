//! BLEU-4 with uniform weights and the standard brevity penalty.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

fn ngram_counts<T: Eq + std::hash::Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and candidate n-gram total for one pair.
fn matches<T: Eq + std::hash::Hash>(cand: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let hit = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (hit, cand.len().saturating_sub(n - 1))
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        0.0
    } else if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

/// Corpus-level BLEU-4 in `[0, 100]`, unsmoothed: any order with zero
/// matches gives 0. When no candidate is long enough for the higher
/// orders, the geometric mean runs over the orders that exist.
pub fn bleu<T: Eq + std::hash::Hash>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::usage("BLEU of an empty candidate list"));
    }
    if candidates.len() != references.len() {
        return Err(Error::usage(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut hits = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut c_len, mut r_len) = (0, 0);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=MAX_ORDER {
            let (h, t) = matches(c, r, n);
            hits[n - 1] += h;
            totals[n - 1] += t;
        }
    }
    // orders longer than every candidate have no n-grams and are left out
    let orders: Vec<usize> = (0..MAX_ORDER).filter(|&i| totals[i] > 0).collect();
    if orders.is_empty() || orders.iter().any(|&i| hits[i] == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = orders
        .iter()
        .map(|&i| (hits[i] as f64 / totals[i] as f64).ln())
        .sum::<f64>()
        / orders.len() as f64;
    Ok(100.0 * brevity_penalty(c_len, r_len) * log_p.exp())
}

/// Sentence-level BLEU-4 with add-one smoothing of the orders above 1.
pub fn sentence_bleu<T: Eq + std::hash::Hash>(candidate: &[T], reference: &[T]) -> f64 {
    let (h1, t1) = matches(candidate, reference, 1);
    if h1 == 0 {
        return 0.0;
    }
    let mut log_p = (h1 as f64 / t1 as f64).ln();
    for n in 2..=MAX_ORDER {
        let (h, t) = matches(candidate, reference, n);
        log_p += ((h + 1) as f64 / (t + 1) as f64).ln();
    }
    100.0 * brevity_penalty(candidate.len(), reference.len()) * (log_p / MAX_ORDER as f64).exp()
}

/// Whitespace tokenization helper.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn identity_and_disjoint() {
        let x = vec![t("a b c d e"), t("the food was great .")];
        assert_eq!(bleu(&x, &x).unwrap(), 100.0);
        let y = vec![t("v w x y z"), t("q r s t u")];
        assert_eq!(bleu(&y, &x).unwrap(), 0.0);
        assert!(bleu::<String>(&[], &[]).is_err());
    }

    #[test]
    fn hand_counted_pair() {
        // candidate: the cat sat on the mat today (7)
        // reference: the cat sat on a mat today ok (8)
        // 1-grams 6/7, 2-grams 4/6 (the cat, cat sat, sat on, mat today),
        // 3-grams 2/5 (the cat sat, cat sat on), 4-grams 1/4
        let c = vec![t("the cat sat on the mat today")];
        let r = vec![t("the cat sat on a mat today ok")];
        let expected = 100.0 * (1.0f64 - 8.0 / 7.0).exp() * ((6.0 / 7.0) * (4.0 / 6.0) * (2.0 / 5.0) * (1.0 / 4.0f64)).powf(0.25);
        assert!((bleu(&c, &r).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn short_candidates() {
        // 1-grams 3/3, 2-grams 2/2, 3-grams 1/1, no 4-grams; BP exp(1 - 4/3)
        let c = t("the cat sat");
        let r = t("the cat sat down");
        let expected = 100.0 * (-1.0f64 / 3.0).exp();
        assert!((bleu(&[c.clone()], &[r.clone()]).unwrap() - expected).abs() < 1e-9);
        assert!((sentence_bleu(&c, &r) - expected).abs() < 1e-9);
        assert_eq!(bleu(&[t("a b")], &[t("a b")]).unwrap(), 100.0);
        assert!(bleu(&[t("a b c d e"), t("x")], &[t("a b c d e"), t("y")]).unwrap() < 100.0);
        assert_eq!(sentence_bleu(&t("a b c d"), &t("a b c d")), 100.0);
    }
}
