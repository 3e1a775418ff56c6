//! Density-based clustering with Euclidean neighbourhoods.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NOISE: i64 = -1;
pub const DEFAULT_EPS: f64 = 0.1;
pub const DEFAULT_MIN_SAMPLES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    /// Neighbourhood size, counting the point itself, that makes a core point.
    pub min_samples: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cluster labels `0, 1, ...` in order of each cluster's first core point,
/// or [`NOISE`]. Core points within `eps` of each other share a cluster; a
/// border point joins the cluster of its nearest core neighbour (lowest
/// index on ties), which makes the result independent of visiting order.
pub fn dbscan(points: &[Vec<f64>], params: DbscanParams) -> Result<Vec<i64>> {
    if !(params.eps > 0.0) || params.min_samples == 0 {
        return Err(Error::usage("dbscan needs eps > 0 and min_samples >= 1"));
    }
    let n = points.len();
    let eps2 = params.eps * params.eps;
    let near = |i: usize, j: usize| sq_dist(&points[i], &points[j]) <= eps2;
    // neighbour lists are recomputed on demand; dense clouds would make them quadratic in memory
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).take(params.min_samples).count() >= params.min_samples)
        .collect();
    let mut labels = vec![NOISE; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if !core[start] || labels[start] != NOISE {
            continue;
        }
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if core[j] && labels[j] == NOISE && near(i, j) {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let nearest = (0..n)
            .filter(|&j| core[j])
            .map(|j| (sq_dist(&points[i], &points[j]), j))
            .filter(|&(d, _)| d <= eps2)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, j)) = nearest {
            labels[i] = labels[j];
        }
    }
    Ok(labels)
}

/// Number of distinct non-noise labels.
pub fn cluster_count(labels: &[i64]) -> usize {
    labels.iter().filter(|&&l| l != NOISE).max().map_or(0, |&m| m as usize + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_and_noise() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(vec![0.01 * i as f64, 0.0]);
            pts.push(vec![5.0 + 0.01 * i as f64, 5.0]);
        }
        pts.push(vec![-3.0, 3.0]);
        let l = dbscan(&pts, DbscanParams::default()).unwrap();
        assert_eq!(cluster_count(&l), 2);
        assert_eq!(l[20], NOISE);
        assert!(l[..20].iter().step_by(2).all(|&x| x == l[0]));
        assert!(l[1..20].iter().step_by(2).all(|&x| x == l[1]));
    }

    #[test]
    fn border_goes_to_nearest_core() {
        // two dense groups with a border point nearer to the right one
        let pts: Vec<Vec<f64>> = [0.0, 0.005, 0.01, 0.02, 0.115, 0.2, 0.22, 0.24, 0.26]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let l = dbscan(&pts, DbscanParams { eps: 0.1, min_samples: 4 }).unwrap();
        assert_eq!(cluster_count(&l), 2);
        assert_eq!(l[4], l[5]);
        assert_ne!(l[3], l[4]);
    }
}
