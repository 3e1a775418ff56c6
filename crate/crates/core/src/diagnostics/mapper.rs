//! Mapper graphs over latent clouds, with the coordinate sum as lens.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dbscan::{dbscan, DbscanParams, NOISE};
use super::mixture::with_pool;
use crate::error::{Error, Result};

pub const DEFAULT_OVERLAP: f64 = 0.25;
pub const DEFAULT_SWEEP: [usize; 3] = [5, 10, 20];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapperParams {
    pub n_intervals: usize,
    pub overlap: f64,
    pub dbscan: DbscanParams,
}

impl MapperParams {
    pub fn new(n_intervals: usize) -> Self {
        Self {
            n_intervals,
            overlap: DEFAULT_OVERLAP,
            dbscan: DbscanParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapperNode {
    pub interval: usize,
    pub cluster: usize,
    /// Sorted point ids.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapperGraph {
    pub nodes: Vec<MapperNode>,
    /// Node index pairs `(a, b)` with `a < b`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub params: MapperParams,
}

pub fn lens(point: &[f64]) -> f64 {
    point.iter().sum()
}

/// Cover of `[lo, hi]` by `n` equal intervals where neighbours share the
/// fraction `overlap` of their length. Intervals are closed.
pub fn cover(lo: f64, hi: f64, n: usize, overlap: f64) -> Vec<(f64, f64)> {
    let len = (hi - lo) / (1.0 + (n as f64 - 1.0) * (1.0 - overlap));
    let step = len * (1.0 - overlap);
    (0..n)
        .map(|i| {
            let a = lo + i as f64 * step;
            // the last interval ends exactly at `hi` regardless of rounding
            let b = if i + 1 == n { hi } else { a + len };
            (a, b)
        })
        .collect()
}

pub fn mapper(points: &[Vec<f64>], params: MapperParams) -> Result<MapperGraph> {
    if points.is_empty() {
        return Err(Error::usage("mapper needs at least one point"));
    }
    if params.n_intervals == 0 || !(0.0..1.0).contains(&params.overlap) {
        return Err(Error::usage("mapper needs n_intervals >= 1 and 0 <= overlap < 1"));
    }
    let f: Vec<f64> = points.iter().map(|p| lens(p)).collect();
    let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NumericDomain("non-finite lens value".into()));
    }
    let intervals = cover(lo, hi, params.n_intervals, params.overlap);
    let per_interval: Vec<Vec<MapperNode>> = with_pool(|| {
        intervals
            .par_iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                let ids: Vec<usize> = (0..points.len())
                    .filter(|&i| (k == 0 || f[i] >= a) && (k + 1 == intervals.len() || f[i] <= b))
                    .collect();
                let sub: Vec<Vec<f64>> = ids.iter().map(|&i| points[i].clone()).collect();
                let labels = dbscan(&sub, params.dbscan)?;
                let mut nodes: Vec<MapperNode> = Vec::new();
                for (&id, &l) in ids.iter().zip(&labels) {
                    if l == NOISE {
                        continue;
                    }
                    let c = l as usize;
                    while nodes.len() <= c {
                        nodes.push(MapperNode {
                            interval: k,
                            cluster: nodes.len(),
                            members: Vec::new(),
                        });
                    }
                    nodes[c].members.push(id);
                }
                Ok(nodes)
            })
            .collect::<Result<_>>()
    })?;
    let nodes: Vec<MapperNode> = per_interval.into_iter().flatten().collect();
    let sets: Vec<BTreeSet<usize>> = nodes.iter().map(|n| n.members.iter().copied().collect()).collect();
    let mut edges = Vec::new();
    for a in 0..nodes.len() {
        for b in a + 1..nodes.len() {
            if nodes[a].interval != nodes[b].interval && !sets[a].is_disjoint(&sets[b]) {
                edges.push((a, b));
            }
        }
    }
    Ok(MapperGraph { nodes, edges, params })
}

/// One graph per resolution in `sweep`.
pub fn mapper_sweep(points: &[Vec<f64>], sweep: &[usize], base: MapperParams) -> Result<Vec<MapperGraph>> {
    sweep
        .iter()
        .map(|&n| mapper(points, MapperParams { n_intervals: n, ..base }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub count: usize,
    /// Component id per node, numbered by first node.
    pub membership: Vec<usize>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Union-find over the graph's edges.
pub fn connected_components(graph: &MapperGraph) -> Components {
    components_of(graph.nodes.len(), &graph.edges)
}

pub fn components_of(n: usize, edges: &[(usize, usize)]) -> Components {
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut id = vec![usize::MAX; n];
    let mut membership = Vec::with_capacity(n);
    let mut count = 0;
    for x in 0..n {
        let r = find(&mut parent, x);
        if id[r] == usize::MAX {
            id[r] = count;
            count += 1;
        }
        membership.push(id[r]);
    }
    Components { count, membership }
}

#[derive(Serialize)]
struct NodeOut {
    id: usize,
    interval: usize,
    cluster: usize,
    size: usize,
}

#[derive(Serialize)]
struct LinkOut {
    source: usize,
    target: usize,
}

#[derive(Serialize)]
struct GraphOut<'a> {
    nodes: Vec<NodeOut>,
    links: Vec<LinkOut>,
    params: &'a MapperParams,
    components: usize,
}

impl MapperGraph {
    /// Node-link JSON with member counts.
    pub fn to_json(&self) -> Result<String> {
        let out = GraphOut {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| NodeOut {
                    id,
                    interval: n.interval,
                    cluster: n.cluster,
                    size: n.members.len(),
                })
                .collect(),
            links: self.edges.iter().map(|&(source, target)| LinkOut { source, target }).collect(),
            params: &self.params,
            components: connected_components(self).count,
        };
        Ok(serde_json::to_string_pretty(&out)?)
    }
}
