use std::collections::BTreeMap;

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMapping {
    /// Each cluster goes to its most frequent gold topic (lowest id on ties).
    Majority,
    /// One-to-one assignment maximizing correctly mapped points.
    Hungarian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicScore {
    pub topic: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub assigned: usize,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterEval {
    /// Cluster id to gold topic.
    pub mapping: BTreeMap<usize, usize>,
    /// One entry per gold topic `0..=max label`.
    pub topics: Vec<TopicScore>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn cluster_metrics(assignments: &[usize], gold: &[usize], mapping: ClusterMapping) -> Result<ClusterEval> {
    if assignments.len() != gold.len() {
        return Err(Error::usage(format!(
            "{} assignments for {} gold labels",
            assignments.len(),
            gold.len()
        )));
    }
    let n_topics = gold.iter().max().map_or(0, |m| m + 1);
    // contingency: cluster -> counts per topic
    let mut table: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&c, &g) in assignments.iter().zip(gold) {
        table.entry(c).or_insert_with(|| vec![0; n_topics])[g] += 1;
    }
    let map: BTreeMap<usize, usize> = match mapping {
        ClusterMapping::Majority => table
            .iter()
            .map(|(&c, counts)| {
                let mut best = 0;
                for (t, &k) in counts.iter().enumerate() {
                    if k > counts[best] {
                        best = t;
                    }
                }
                (c, best)
            })
            .collect(),
        ClusterMapping::Hungarian => {
            if table.len() > n_topics {
                return Err(Error::usage(format!(
                    "one-to-one mapping needs at most {n_topics} clusters, found {}",
                    table.len()
                )));
            }
            if table.is_empty() {
                BTreeMap::new()
            } else {
                let rows: Vec<Vec<i64>> = table.values().map(|r| r.iter().map(|&k| k as i64).collect()).collect();
                let weights = Matrix::from_rows(rows).map_err(|e| Error::usage(format!("contingency table: {e:?}")))?;
                let (_, cols) = kuhn_munkres(&weights);
                table.keys().copied().zip(cols).collect()
            }
        }
    };
    let mut topics: Vec<TopicScore> = (0..n_topics)
        .map(|t| TopicScore {
            topic: t,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            gold: 0,
            assigned: 0,
            correct: 0,
        })
        .collect();
    for (&c, &g) in assignments.iter().zip(gold) {
        let m = map[&c];
        topics[g].gold += 1;
        topics[m].assigned += 1;
        if m == g {
            topics[g].correct += 1;
        }
    }
    for t in &mut topics {
        t.precision = ratio(t.correct, t.assigned);
        t.recall = ratio(t.correct, t.gold);
        let s = t.precision + t.recall;
        t.f1 = if s > 0.0 { 2.0 * t.precision * t.recall / s } else { 0.0 };
    }
    Ok(ClusterEval { mapping: map, topics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_single_cluster() {
        let gold = [0, 0, 1, 1, 2, 2];
        let e = cluster_metrics(&[7, 7, 3, 3, 9, 9], &gold, ClusterMapping::Majority).unwrap();
        assert!(e.topics.iter().all(|t| t.precision == 1.0 && t.recall == 1.0 && t.f1 == 1.0));
        let one = cluster_metrics(&[0; 5], &[1, 1, 1, 0, 2], ClusterMapping::Majority).unwrap();
        assert_eq!(one.topics[1].recall, 1.0);
        assert_eq!((one.topics[0].recall, one.topics[2].recall), (0.0, 0.0));
    }

    #[test]
    fn hand_tabulated_six_points() {
        // cluster 0: topics {0,0,1} -> 0; cluster 1: topics {1,1,0} -> 1
        let e = cluster_metrics(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 1, 0], ClusterMapping::Majority).unwrap();
        assert_eq!(e.mapping, BTreeMap::from([(0, 0), (1, 1)]));
        for t in &e.topics {
            assert_eq!((t.correct, t.assigned, t.gold), (2, 3, 3));
            assert_eq!(t.precision, 2.0 / 3.0);
            assert_eq!(t.recall, 2.0 / 3.0);
        }
    }

    #[test]
    fn hungarian_is_one_to_one() {
        // both clusters lean to topic 0; majority maps both there
        let a = [0, 0, 0, 1, 1, 1];
        let g = [0, 0, 1, 0, 0, 1];
        let maj = cluster_metrics(&a, &g, ClusterMapping::Majority).unwrap();
        assert_eq!(maj.mapping.values().copied().collect::<Vec<_>>(), vec![0, 0]);
        let h = cluster_metrics(&a, &g, ClusterMapping::Hungarian).unwrap();
        let mut v: Vec<usize> = h.mapping.values().copied().collect();
        v.sort();
        assert_eq!(v, vec![0, 1]);
        assert!(cluster_metrics(&[0, 1, 2], &[0, 1, 1], ClusterMapping::Hungarian).is_err());
    }
}
