use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetric {
    /// Target class of the transferred sentences.
    pub class: usize,
    pub count: usize,
    pub accuracy: f64,
    pub bleu: f64,
}

/// Transfer accuracy (AC, percent) and self-BLEU (BL, 0-100).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub bleu: f64,
    pub per_class: Vec<ClassMetric>,
    pub config_fingerprint: String,
}

/// Hex SHA-256 of a configuration snapshot.
pub fn config_fingerprint(snapshot: &str) -> String {
    Sha256::digest(snapshot.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl MetricReport {
    pub fn new(accuracy: f64, bleu: f64, per_class: Vec<ClassMetric>, config_fingerprint: String) -> Result<Self> {
        let ok = |x: f64| (0.0..=100.0).contains(&x);
        if !ok(accuracy) || !ok(bleu) || per_class.iter().any(|c| !ok(c.accuracy) || !ok(c.bleu)) {
            return Err(Error::NumericDomain(format!("metric out of [0, 100]: AC {accuracy}, BL {bleu}")));
        }
        Ok(Self {
            accuracy,
            bleu,
            per_class,
            config_fingerprint,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Header plus one data row; per-class columns are `ac_<c>,bl_<c>`.
    pub fn to_csv(&self) -> String {
        let mut head = vec!["accuracy".to_string(), "bleu".into()];
        let mut row = vec![format!("{:?}", self.accuracy), format!("{:?}", self.bleu)];
        for c in &self.per_class {
            head.push(format!("ac_{}", c.class));
            head.push(format!("bl_{}", c.class));
            row.push(format!("{:?}", c.accuracy));
            row.push(format!("{:?}", c.bleu));
        }
        head.push("config_fingerprint".into());
        row.push(self.config_fingerprint.clone());
        format!("{}\n{}\n", head.join(","), row.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_and_csv() {
        assert!(MetricReport::new(101.0, 10.0, vec![], String::new()).is_err());
        let r = MetricReport::new(
            75.0,
            40.5,
            vec![ClassMetric { class: 0, count: 2, accuracy: 50.0, bleu: 41.0 }],
            config_fingerprint("k = 3"),
        )
        .unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("accuracy,bleu,ac_0,bl_0,config_fingerprint"));
        assert_eq!(r.config_fingerprint.len(), 64);
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
