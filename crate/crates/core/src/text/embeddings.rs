use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::vocab::{Vocabulary, BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};

/// Standard deviation of the random rows given to tokens missing from the file.
pub const OOV_STD: f64 = 0.01;

/// Fixed `|V| × d` word-vector matrix (GloVe text layout on disk).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    matrix: Vec<f64>,
    dim: usize,
    oov_seed: u64,
}

impl EmbeddingTable {
    pub fn from_matrix(matrix: Vec<f64>, dim: usize, oov_seed: u64) -> Result<Self> {
        if dim == 0 || matrix.len() % dim != 0 {
            return Err(Error::usage("embedding matrix is not a multiple of its width"));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericDomain("embedding matrix has non-finite entries".into()));
        }
        Ok(Self {
            matrix,
            dim,
            oov_seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.matrix.len() / self.dim
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.matrix[id * self.dim..(id + 1) * self.dim]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// Parses `token v₁ … v_d` lines. Tokens not in the file receive
    /// `N(0, 0.01²)` rows drawn from `oov_seed`; the `<pad>` row is zero.
    pub fn from_reader<R: BufRead>(reader: R, source: &str, vocab: &Vocabulary, dim: usize, oov_seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("embedding width must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(oov_seed);
        let normal = Normal::new(0.0, OOV_STD).expect("finite std");
        let mut matrix: Vec<f64> = (0..vocab.len() * dim).map(|_| normal.sample(&mut rng)).collect();
        matrix[PAD * dim..(PAD + 1) * dim].iter_mut().for_each(|x| *x = 0.0);

        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    path: source.to_string(),
                    line: lineno + 1,
                    message: format!("non-numeric value: {e}"),
                })?;
            if values.len() != dim {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: lineno + 1,
                    message: format!("expected {dim} values, found {}", values.len()),
                });
            }
            if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: lineno + 1,
                    message: format!("non-finite value {bad}"),
                });
            }
            if let Some(id) = vocab.get(token) {
                if id != PAD {
                    matrix[id * dim..(id + 1) * dim].copy_from_slice(&values);
                }
            }
        }
        Self::from_matrix(matrix, dim, oov_seed)
    }

    pub fn load(path: &Path, vocab: &Vocabulary, dim: usize, oov_seed: u64) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(file), &path.display().to_string(), vocab, dim, oov_seed)
    }

    /// GloVe text layout, one `token v₁ … v_d` line per vocabulary entry except `<pad>`.
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for (id, tok) in vocab.tokens().iter().enumerate().skip(1) {
            out.push_str(tok);
            for v in self.row(id) {
                out.push(' ');
                out.push_str(&format!("{v:?}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean of the embedding rows of `tokens`, skipping `<pad>`, `<s>`, `</s>` but
/// keeping `<unk>`.
pub fn sentence_representation(tokens: &[usize], table: &EmbeddingTable) -> Result<Vec<f64>> {
    mean_of_rows(tokens, table.matrix(), table.dim())
}

/// [`sentence_representation`] over a raw row-major `[rows, dim]` matrix.
pub fn mean_of_rows(tokens: &[usize], matrix: &[f64], dim: usize) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::usage("sentence representation of an empty token list"));
    }
    let rows = matrix.len() / dim;
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for &t in tokens {
        if matches!(t, PAD | BOS | EOS) {
            continue;
        }
        let id = if t < rows { t } else { UNK };
        for (a, v) in acc.iter_mut().zip(&matrix[id * dim..(id + 1) * dim]) {
            *a += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::usage("sentence has no content tokens after filtering"));
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}
