use serde::{Deserialize, Serialize};

use super::mixture::GaussianMixture;
use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count_before: usize,
    pub count_after: usize,
}

/// Paired NLLs of original and manipulated codes under one mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NllShiftReport {
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub bins: Vec<HistogramBin>,
    pub median_before: f64,
    pub median_after: f64,
    pub mean_before: f64,
    pub mean_after: f64,
    /// Median of the per-sample differences `after - before`.
    pub median_shift: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Shared-range histogram; the last bin is closed on the right.
fn histogram(before: &[f64], after: &[f64], bins: usize) -> Vec<HistogramBin> {
    let all = before.iter().chain(after);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            left: lo + i as f64 * width,
            right: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
            count_before: 0,
            count_after: 0,
        })
        .collect();
    let slot = |x: f64| (((x - lo) / width).floor() as usize).min(bins - 1);
    for &x in before {
        out[slot(x)].count_before += 1;
    }
    for &x in after {
        out[slot(x)].count_after += 1;
    }
    out
}

pub fn nll_shift_report(mixture: &GaussianMixture, codes: &[Vec<f64>], manipulated: &[Vec<f64>]) -> Result<NllShiftReport> {
    if codes.len() != manipulated.len() {
        return Err(Error::usage(format!(
            "{} original codes for {} manipulated codes",
            codes.len(),
            manipulated.len()
        )));
    }
    if codes.is_empty() {
        return Err(Error::usage("no codes to compare"));
    }
    let before = mixture.nll_batch(codes)?;
    let after = mixture.nll_batch(manipulated)?;
    report_from_nlls(before, after)
}

/// Builds the report from already computed paired NLLs.
pub fn report_from_nlls(before: Vec<f64>, after: Vec<f64>) -> Result<NllShiftReport> {
    if before.len() != after.len() || before.is_empty() {
        return Err(Error::usage("NLL arrays must be non-empty and aligned"));
    }
    if before.iter().chain(&after).any(|x| !x.is_finite()) {
        return Err(Error::NumericDomain("non-finite NLL in shift report".into()));
    }
    let diffs: Vec<f64> = after.iter().zip(&before).map(|(a, b)| a - b).collect();
    Ok(NllShiftReport {
        bins: histogram(&before, &after, HISTOGRAM_BINS),
        median_before: median(&before),
        median_after: median(&after),
        mean_before: mean(&before),
        mean_after: mean(&after),
        median_shift: median(&diffs),
        before,
        after,
    })
}

/// Summary fields only, for the JSON sidecar.
#[derive(Serialize)]
struct Summary {
    samples: usize,
    median_before: f64,
    median_after: f64,
    mean_before: f64,
    mean_after: f64,
    median_shift: f64,
}

impl NllShiftReport {
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,count_before,count_after\n");
        for b in &self.bins {
            s.push_str(&format!("{:?},{:?},{},{}\n", b.left, b.right, b.count_before, b.count_after));
        }
        s
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Summary {
            samples: self.before.len(),
            median_before: self.median_before,
            median_after: self.median_after,
            mean_before: self.mean_before,
            mean_after: self.mean_after,
            median_shift: self.median_shift,
        })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_shift() {
        let g = GaussianMixture::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![vec![1.0, 1.0]; 2]).unwrap();
        let codes: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 * 0.3, -0.1 * i as f64]).collect();
        let r = nll_shift_report(&g, &codes, &codes).unwrap();
        assert_eq!(r.median_shift, 0.0);
        assert!(r.bins.iter().all(|b| b.count_before == b.count_after));
        assert_eq!(r.bins.iter().map(|b| b.count_before).sum::<usize>(), 9);
        assert_eq!(r.bins.len(), HISTOGRAM_BINS);
        assert!(nll_shift_report(&g, &codes, &codes[1..]).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let r = report_from_nlls(vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 3.0]).unwrap();
        assert_eq!(r.median_shift, 1.0);
        assert!(r.histogram_csv().starts_with("bin_left,bin_right,count_before,count_after\n"));
    }
}
