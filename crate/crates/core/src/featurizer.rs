//! Fixed-length dataset embedding built from degree, spectral, reachability
//! and connectivity statistics of the user-item graph.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::eigen::{top_eigenvalues, LanczosConfig};
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, UnionFind};
use crate::rng;
use crate::scalar::Scalar;

pub const EMBEDDING_DIM: usize = 53;
pub const SAMPLES_PER_DISTRIBUTION: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeConfig {
    pub top_eigenvalues: usize,
    pub hop_sources: usize,
    pub max_hops: usize,
    pub seed: u64,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        FeaturizeConfig {
            top_eigenvalues: 100,
            hop_sources: 500,
            max_hops: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEmbedding {
    pub user_freq: [f64; 10],
    pub item_freq: [f64; 10],
    pub eigen: [f64; 10],
    pub hop_plot: [f64; 10],
    pub component_sizes: [f64; 10],
    /// Active users, active items, interactions.
    pub counts: [f64; 3],
}

impl DatasetEmbedding {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(EMBEDDING_DIM);
        v.extend_from_slice(&self.user_freq);
        v.extend_from_slice(&self.item_freq);
        v.extend_from_slice(&self.eigen);
        v.extend_from_slice(&self.hop_plot);
        v.extend_from_slice(&self.component_sizes);
        v.extend_from_slice(&self.counts);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != EMBEDDING_DIM {
            return Err(Error::Config(format!(
                "embedding needs {EMBEDDING_DIM} values, got {}",
                v.len()
            )));
        }
        let block =
            |k: usize| -> [f64; 10] { v[k * 10..k * 10 + 10].try_into().expect("10 values") };
        Ok(DatasetEmbedding {
            user_freq: block(0),
            item_freq: block(1),
            eigen: block(2),
            hop_plot: block(3),
            component_sizes: block(4),
            counts: [v[50], v[51], v[52]],
        })
    }
}

/// Values at positions `round(k/9 * (len-1))`, `k = 0..9`, of a list
/// already sorted descending. Empty lists give zeros.
pub fn quantile_samples(sorted_desc: &[f64]) -> [f64; 10] {
    let mut out = [0.0; 10];
    if sorted_desc.is_empty() {
        return out;
    }
    let last = (sorted_desc.len() - 1) as f64;
    for (k, o) in out.iter_mut().enumerate() {
        let pos = (k as f64 / 9.0 * last).round() as usize;
        *o = sorted_desc[pos];
    }
    out
}

fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Adjacency restricted to nodes with at least one edge, in CSR form.
struct CompactGraph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl CompactGraph {
    fn new(graph: &BipartiteGraph) -> Self {
        let active = graph.active_nodes();
        let mut local = vec![u32::MAX; graph.num_nodes()];
        for (k, &v) in active.iter().enumerate() {
            local[v as usize] = k as u32;
        }
        let mut offsets = vec![0];
        let mut targets = Vec::with_capacity(2 * graph.num_edges());
        for &v in &active {
            targets.extend(
                graph
                    .neighbors(v as usize)
                    .iter()
                    .map(|&(w, _)| local[w as usize]),
            );
            offsets.push(targets.len());
        }
        CompactGraph { offsets, targets }
    }

    fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    fn neighbors(&self, v: usize) -> &[u32] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Largest-magnitude adjacency eigenvalues, then sorted by value descending
/// and zero-padded to `k`.
pub fn adjacency_spectrum<T: Scalar>(
    graph: &BipartiteGraph,
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let g = CompactGraph::new(graph);
    let apply = |x: &[T], y: &mut [T]| {
        for (v, out) in y.iter_mut().enumerate() {
            *out = g.neighbors(v).iter().map(|&w| x[w as usize]).sum();
        }
    };
    let top = top_eigenvalues::<T>(
        g.len(),
        k,
        apply,
        &LanczosConfig {
            seed,
            ..LanczosConfig::default()
        },
    )?;
    let mut vals: Vec<f64> = top.iter().map(|x| x.as_f64()).collect();
    vals.resize(k, 0.0);
    Ok(sorted_desc(vals))
}

/// Estimated number of ordered node pairs within `h` hops, `h = 1..=max_hops`,
/// from BFS out of a seeded sample of sources, scaled to all active nodes.
pub fn hop_plot(graph: &BipartiteGraph, sources: usize, max_hops: usize, seed: u64) -> Vec<f64> {
    let g = CompactGraph::new(graph);
    let n = g.len();
    if n == 0 {
        return vec![0.0; max_hops];
    }
    let s = sources.min(n);
    let mut r = rng::rng(seed, "hop-plot");
    let chosen = rand::seq::index::sample(&mut r, n, s).into_vec();
    let mut within = vec![0u64; max_hops + 1];
    let mut dist = vec![u32::MAX; n];
    let mut touched = Vec::new();
    let mut queue = VecDeque::new();
    for src in chosen {
        dist[src] = 0;
        touched.push(src);
        queue.push_back(src);
        while let Some(v) = queue.pop_front() {
            let d = dist[v] as usize;
            if d == max_hops {
                continue;
            }
            for &w in g.neighbors(v) {
                let w = w as usize;
                if dist[w] == u32::MAX {
                    dist[w] = (d + 1) as u32;
                    within[d + 1] += 1;
                    touched.push(w);
                    queue.push_back(w);
                }
            }
        }
        for &v in &touched {
            dist[v] = u32::MAX;
        }
        touched.clear();
    }
    let scale = n as f64 / s as f64;
    let mut out = Vec::with_capacity(max_hops);
    let mut acc = 0u64;
    for &c in &within[1..] {
        acc += c;
        out.push(acc as f64 * scale);
    }
    out
}

/// Sizes of the connected components over active nodes, descending.
pub fn component_sizes(graph: &BipartiteGraph) -> Vec<f64> {
    let mut uf = UnionFind::new(graph.num_nodes());
    for v in 0..graph.num_nodes() {
        for &(w, _) in graph.neighbors(v) {
            uf.union(v, w as usize);
        }
    }
    let mut sizes = Vec::new();
    for v in graph.active_nodes() {
        let v = v as usize;
        if uf.find(v) == v {
            sizes.push(uf.component_size(v) as f64);
        }
    }
    sorted_desc(sizes)
}

pub fn featurize<T: Scalar>(ds: &Dataset, config: &FeaturizeConfig) -> Result<DatasetEmbedding> {
    if ds.is_empty() {
        return Err(Error::InvalidDataset(
            "cannot featurize an empty dataset".into(),
        ));
    }
    let graph = BipartiteGraph::from_dataset(ds);
    let user_deg = (0..ds.num_users())
        .map(|u| ds.user_degree(u))
        .filter(|&d| d > 0)
        .map(|d| d as f64)
        .collect();
    let item_deg = (0..ds.num_items())
        .map(|i| ds.item_degree(i))
        .filter(|&d| d > 0)
        .map(|d| d as f64)
        .collect();
    let eigen = adjacency_spectrum::<T>(&graph, config.top_eigenvalues, config.seed)?;
    let hops = hop_plot(&graph, config.hop_sources, config.max_hops, config.seed);
    let mut hop_plot = [0.0; 10];
    for (o, h) in hop_plot.iter_mut().zip(&hops) {
        *o = *h;
    }
    Ok(DatasetEmbedding {
        user_freq: quantile_samples(&sorted_desc(user_deg)),
        item_freq: quantile_samples(&sorted_desc(item_deg)),
        eigen: quantile_samples(&eigen),
        hop_plot,
        component_sizes: quantile_samples(&component_sizes(&graph)),
        counts: [
            ds.num_active_users() as f64,
            ds.num_active_items() as f64,
            ds.len() as f64,
        ],
    })
}

/// Whether dimension `k` is count-like (log-compressed before scaling).
pub fn is_count_like(k: usize) -> bool {
    !(20..30).contains(&k)
}

/// Per-dimension standardization fitted on the genie training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub log_dims: Vec<bool>,
}

impl NormStats {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Config(
                "normalization needs at least one embedding".into(),
            ));
        };
        let dim = first.len();
        let log_dims: Vec<bool> = (0..dim)
            .map(|k| dim == EMBEDDING_DIM && is_count_like(k))
            .collect();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        let mut std = vec![0.0; dim];
        let pre = |k: usize, x: f64| if log_dims[k] { x.max(0.0).ln_1p() } else { x };
        for r in rows {
            for k in 0..dim {
                mean[k] += pre(k, r[k]) / n;
            }
        }
        for r in rows {
            for k in 0..dim {
                std[k] += (pre(k, r[k]) - mean[k]).powi(2) / n;
            }
        }
        for (k, s) in std.iter_mut().enumerate() {
            *s = s.sqrt();
            if *s < 1e-12 {
                log::warn!("dimension {k} has zero spread; centering only");
            }
        }
        Ok(NormStats {
            mean,
            std,
            log_dims,
        })
    }

    fn divisor(&self, k: usize) -> f64 {
        if self.std[k] < 1e-12 {
            1.0
        } else {
            self.std[k]
        }
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(k, &x)| {
                let x = if self.log_dims[k] {
                    x.max(0.0).ln_1p()
                } else {
                    x
                };
                (x - self.mean[k]) / self.divisor(k)
            })
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(k, &x)| {
                let y = x * self.divisor(k) + self.mean[k];
                if self.log_dims[k] {
                    y.exp_m1()
                } else {
                    y
                }
            })
            .collect()
    }
}
