use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after every assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_centroids<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let next = match WeightedIndex::new(&d) {
            Ok(w) => w.sample(rng),
            // every point already coincides with a centroid
            Err(_) => rng.random_range(0..points.len()),
        };
        centroids.push(points[next].clone());
    }
    centroids
}

/// Lloyd iterations from k-means++ seeds. Stops after [`MAX_ITERATIONS`] or
/// once no centroid moves more than [`TOLERANCE`]. Empty clusters keep
/// their previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::usage("k must be at least 1"));
    }
    if k > points.len() {
        return Err(Error::usage(format!("k = {k} exceeds {} points", points.len())));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d || p.iter().any(|x| !x.is_finite())) {
        return Err(Error::usage("points must be finite and of equal width"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignments = vec![0; points.len()];
    let mut objective = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut wcss = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (j, dist) = nearest(p, &centroids);
            *a = j;
            wcss += dist;
        }
        objective.push(wcss);
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut moved = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let c: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            moved = moved.max(sq_dist(&c, &centroids[j]).sqrt());
            centroids[j] = c;
        }
        if moved < TOLERANCE {
            break;
        }
    }
    // final assignment against the converged centroids
    let mut wcss = 0.0;
    for (a, p) in assignments.iter_mut().zip(points) {
        let (j, dist) = nearest(p, &centroids);
        *a = j;
        wcss += dist;
    }
    objective.push(wcss);
    Ok(KMeansResult {
        assignments,
        centroids,
        objective,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..60)
            .map(|i| {
                let c = if i % 2 == 0 { -10.0 } else { 10.0 };
                vec![c + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
            })
            .collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let r = kmeans(&pts, 1, 0).unwrap();
        assert_eq!(r.centroids[0], vec![2.0, 1.0]);
        assert!(kmeans(&pts, 4, 0).is_err());
    }

    #[test]
    fn blob_pure_and_reproducible() {
        let pts = blobs();
        let r = kmeans(&pts, 2, 1).unwrap();
        for (i, &a) in r.assignments.iter().enumerate() {
            assert_eq!(a, r.assignments[i % 2]);
        }
        assert_ne!(r.assignments[0], r.assignments[1]);
        assert_eq!(r, kmeans(&pts, 2, 1).unwrap());
        assert!(r.objective.windows(2).all(|w| w[1] <= w[0]));
    }
}
