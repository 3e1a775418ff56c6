//! Where training sentences land on the probability simplex.

use std::collections::BTreeSet;

use rayon::prelude::*;

use super::mixture::with_pool;
use crate::error::{Error, Result};
use crate::model::CpVaeModel;
use crate::text::Corpus;

/// Lattice resolution for [`grid_coverage`]: points `(a, b, c) / 4`.
pub const GRID_DIVISIONS: usize = 4;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexExport {
    pub p: Vec<Vec<f64>>,
    /// Planar coordinates, present when requested for `K = 3`.
    pub xy: Option<Vec<(f64, f64)>>,
}

/// Maps `p` on the 3-simplex to a triangle with vertices `(0, 0)`, `(1, 0)`
/// and `(½, √3/2)`.
pub fn barycentric(p: &[f64]) -> Result<(f64, f64)> {
    if p.len() != 3 {
        return Err(Error::usage(format!("barycentric coordinates need K = 3, got {}", p.len())));
    }
    Ok((p[1] + 0.5 * p[2], SQRT3_2 * p[2]))
}

pub fn simplex_coverage_export(model: &CpVaeModel, corpus: &Corpus, with_xy: bool) -> Result<SimplexExport> {
    if !model.is_structured() {
        return Err(Error::usage("the baseline model has no simplex"));
    }
    let p: Vec<Vec<f64>> = with_pool(|| {
        corpus
            .sentences()
            .par_iter()
            .map(|s| model.encode(s).map(|b| b.p))
            .collect::<Result<_>>()
    })?;
    let xy = if with_xy {
        Some(p.iter().map(|r| barycentric(r)).collect::<Result<_>>()?)
    } else {
        None
    };
    Ok(SimplexExport { p, xy })
}

impl SimplexExport {
    pub fn to_csv(&self) -> String {
        let k = self.p.first().map_or(0, Vec::len);
        let mut head: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
        if self.xy.is_some() {
            head.extend(["x".to_string(), "y".to_string()]);
        }
        let mut s = head.join(",") + "\n";
        for (i, row) in self.p.iter().enumerate() {
            let mut cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            if let Some(xy) = &self.xy {
                cells.push(format!("{:?}", xy[i].0));
                cells.push(format!("{:?}", xy[i].1));
            }
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// The 15 lattice points of the 3-simplex, in lexicographic `(a, b)` order.
pub fn lattice() -> Vec<[f64; 3]> {
    let d = GRID_DIVISIONS;
    let mut out = Vec::new();
    for a in 0..=d {
        for b in 0..=d - a {
            let c = d - a - b;
            out.push([a as f64 / d as f64, b as f64 / d as f64, c as f64 / d as f64]);
        }
    }
    out
}

/// Fraction of the 15 lattice points that are the nearest lattice point of
/// at least one `p` (ties to the earlier lattice point).
pub fn grid_coverage(p: &[Vec<f64>]) -> Result<f64> {
    let grid = lattice();
    let mut hit = BTreeSet::new();
    for row in p {
        if row.len() != 3 {
            return Err(Error::usage("grid coverage needs K = 3"));
        }
        let mut best = (0, f64::INFINITY);
        for (i, g) in grid.iter().enumerate() {
            let d: f64 = g.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        hit.insert(best.0);
    }
    Ok(hit.len() as f64 / grid.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertices_and_centroid() {
        assert_eq!(barycentric(&[1.0, 0.0, 0.0]).unwrap(), (0.0, 0.0));
        assert_eq!(barycentric(&[0.0, 1.0, 0.0]).unwrap(), (1.0, 0.0));
        assert_eq!(barycentric(&[0.0, 0.0, 1.0]).unwrap(), (0.5, SQRT3_2));
        let (x, y) = barycentric(&[1.0 / 3.0; 3]).unwrap();
        assert!((x - 0.5).abs() < 1e-12 && (y - SQRT3_2 / 3.0).abs() < 1e-12);
        assert!(barycentric(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn lattice_coverage() {
        assert_eq!(lattice().len(), 15);
        let all: Vec<Vec<f64>> = lattice().iter().map(|g| g.to_vec()).collect();
        assert_eq!(grid_coverage(&all).unwrap(), 1.0);
        let corners = vec![vec![1.0, 0.0, 0.0], vec![0.98, 0.01, 0.01], vec![0.0, 0.0, 1.0]];
        assert!((grid_coverage(&corners).unwrap() - 2.0 / 15.0).abs() < 1e-12);
    }
}
