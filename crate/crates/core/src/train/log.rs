use serde::{Deserialize, Serialize};

/// Per-epoch means of the training losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rec: f64,
    pub kl1: Option<f64>,
    pub kl2: f64,
    pub reg: Option<f64>,
    pub srec: Option<f64>,
    pub total: f64,
    pub beta2: f64,
    pub wall_time_secs: f64,
}

/// Append-only list of epoch records.
///
/// The CSV form leaves out wall time so that runs with equal seeds produce
/// byte-identical logs; timings go to [`TrainLog::timing_csv`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    records: Vec<EpochRecord>,
}

pub const CSV_HEADER: &str = "epoch,rec_nll,kl_z1,kl_z2,reg,srec,total,beta2";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl TrainLog {
    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:?},{},{:?},{},{},{:?},{:?}\n",
                r.epoch,
                r.rec,
                cell(r.kl1),
                r.kl2,
                cell(r.reg),
                cell(r.srec),
                r.total,
                r.beta2
            ));
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,wall_time_secs\n");
        for r in &self.records {
            out.push_str(&format!("{},{:.3}\n", r.epoch, r.wall_time_secs));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_skips_wall_time_and_missing_terms() {
        let mut log = TrainLog::default();
        log.push(EpochRecord {
            epoch: 0,
            rec: 1.5,
            kl1: None,
            kl2: 0.25,
            reg: None,
            srec: None,
            total: 1.6,
            beta2: 0.35,
            wall_time_secs: 12.0,
        });
        let mut other = log.clone();
        other.records[0].wall_time_secs = 3.0;
        assert_eq!(log.to_csv(), other.to_csv());
        assert_eq!(log.to_csv().lines().nth(1).unwrap(), "0,1.5,,0.25,,,1.6,0.35");
        assert_ne!(log.timing_csv(), other.timing_csv());
    }
}
