//! Single-dimension manipulation of an unconstrained latent code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension statistics of training posterior means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl DimStats {
    pub fn from_codes(codes: &[Vec<f64>]) -> Result<Self> {
        let d = codes.first().map_or(0, Vec::len);
        if codes.is_empty() || d == 0 || codes.iter().any(|c| c.len() != d) {
            return Err(Error::usage("codes must be non-empty and of equal width"));
        }
        let n = codes.len() as f64;
        let mut s = Self {
            mean: vec![0.0; d],
            std: vec![0.0; d],
            min: vec![f64::INFINITY; d],
            max: vec![f64::NEG_INFINITY; d],
        };
        for c in codes {
            for j in 0..d {
                s.mean[j] += c[j] / n;
                s.min[j] = s.min[j].min(c[j]);
                s.max[j] = s.max[j].max(c[j]);
            }
        }
        for c in codes {
            for j in 0..d {
                s.std[j] += (c[j] - s.mean[j]).powi(2) / n;
            }
        }
        s.std.iter_mut().for_each(|v| *v = v.sqrt());
        Ok(s)
    }
}

/// Best single sentiment dimension: classify by the sign of the centered
/// value, `positive_sign` meaning "centered value > 0 predicts class 1".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimChoice {
    pub dim: usize,
    pub accuracy: f64,
    pub positive_sign: bool,
}

/// Picks the dimension whose sign (after subtracting `train_mean`) best
/// separates the two labels of `codes`.
pub fn baseline_identify_dim(codes: &[Vec<f64>], labels: &[usize], train_mean: &[f64]) -> Result<DimChoice> {
    if codes.len() != labels.len() || codes.is_empty() {
        return Err(Error::usage("codes and labels must be non-empty and aligned"));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::usage("labels must be binary (0/1)"));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::usage("labels contain a single class"));
    }
    let d = train_mean.len();
    if codes.iter().any(|c| c.len() != d) {
        return Err(Error::usage("code width differs from the training mean"));
    }
    let n = codes.len() as f64;
    let mut best: Option<DimChoice> = None;
    for j in 0..d {
        let hits = codes
            .iter()
            .zip(labels)
            .filter(|(c, &l)| (c[j] - train_mean[j] > 0.0) == (l == 1))
            .count() as f64;
        let (accuracy, positive_sign) = if hits >= n - hits { (hits / n, true) } else { ((n - hits) / n, false) };
        if best.is_none_or(|b| accuracy > b.accuracy) {
            best = Some(DimChoice {
                dim: j,
                accuracy,
                positive_sign,
            });
        }
    }
    Ok(best.expect("d > 0"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Move by one standard deviation.
    Sigma,
    /// Move by two standard deviations.
    TwoSigma,
    /// Set to the training minimum or maximum.
    Extremum,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(Self::Sigma),
            "2sigma" | "twosigma" | "two-sigma" => Ok(Self::TwoSigma),
            "extremum" => Ok(Self::Extremum),
            other => Err(Error::usage(format!("unknown strategy `{other}` (sigma|2sigma|extremum)"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sigma => "sigma",
            Self::TwoSigma => "2sigma",
            Self::Extremum => "extremum",
        })
    }
}

/// Sign of the move at the chosen dimension that pushes toward `target` (0 or 1).
pub fn direction_toward(target: usize, choice: &DimChoice) -> f64 {
    if (target == 1) == choice.positive_sign {
        1.0
    } else {
        -1.0
    }
}

/// Shifts `code[dim]` by `direction · σ` (or `2σ`), or sets it to the
/// training max (`direction > 0`) or min. Other entries are copied bitwise.
pub fn baseline_manipulate(code: &[f64], dim: usize, strategy: Strategy, direction: f64, stats: &DimStats) -> Result<Vec<f64>> {
    if dim >= code.len() || stats.std.len() != code.len() {
        return Err(Error::usage(format!("dimension {dim} out of range for width {}", code.len())));
    }
    if direction != 1.0 && direction != -1.0 {
        return Err(Error::usage("direction must be +1 or -1"));
    }
    let mut out = code.to_vec();
    out[dim] = match strategy {
        Strategy::Sigma => code[dim] + direction * stats.std[dim],
        Strategy::TwoSigma => code[dim] + direction * 2.0 * stats.std[dim],
        Strategy::Extremum if direction > 0.0 => stats.max[dim],
        Strategy::Extremum => stats.min[dim],
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> DimStats {
        DimStats {
            mean: vec![0.0; 3],
            std: vec![0.5; 3],
            min: vec![-2.0; 3],
            max: vec![3.0; 3],
        }
    }

    #[test]
    fn arithmetic_and_locality() {
        let code = [1.25, 0.3, -0.7];
        let up = baseline_manipulate(&code, 1, Strategy::Sigma, 1.0, &stats()).unwrap();
        assert_eq!(up[1], 0.8);
        assert_eq!(up[0].to_bits(), code[0].to_bits());
        assert_eq!(up[2].to_bits(), code[2].to_bits());
        let ext = baseline_manipulate(&code, 2, Strategy::Extremum, -1.0, &stats()).unwrap();
        assert_eq!(ext[2], -2.0);
        assert!("median".parse::<Strategy>().is_err());
    }

    #[test]
    fn stats_and_identification() {
        let codes = vec![vec![1.0, 0.0], vec![3.0, 0.0], vec![2.0, 3.0]];
        let s = DimStats::from_codes(&codes).unwrap();
        assert_eq!(s.mean, vec![2.0, 1.0]);
        assert_eq!((s.min[0], s.max[0]), (1.0, 3.0));
        let c = baseline_identify_dim(&[vec![0.0, 2.0], vec![0.0, -2.0]], &[1, 0], &[0.0, 0.0]).unwrap();
        assert_eq!((c.dim, c.accuracy, c.positive_sign), (1, 1.0, true));
        assert!(baseline_identify_dim(&[vec![0.0]], &[1], &[0.0]).is_err());
    }
}
