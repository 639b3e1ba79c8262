//! Bipartite user–item graph view of a dataset.
//!
//! Nodes `0..num_users` are users, `num_users..num_users + num_items` are
//! items; every interaction is one undirected edge, identified by its
//! interaction index, so repeated interactions form parallel edges.

use crate::dataset::Dataset;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    num_users: usize,
    num_items: usize,
    num_edges: usize,
    offsets: Vec<usize>,
    /// (neighbor node, edge id) pairs, grouped by node.
    adjacency: Vec<(u32, u32)>,
}

impl BipartiteGraph {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let n = ds.num_users() + ds.num_items();
        let mut degree = vec![0usize; n];
        for it in ds.interactions() {
            degree[it.user as usize] += 1;
            degree[ds.num_users() + it.item as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut adjacency = vec![(0u32, 0u32); offsets[n]];
        for (e, it) in ds.interactions().iter().enumerate() {
            let u = it.user as usize;
            let i = ds.num_users() + it.item as usize;
            adjacency[cursor[u]] = (i as u32, e as u32);
            cursor[u] += 1;
            adjacency[cursor[i]] = (u as u32, e as u32);
            cursor[i] += 1;
        }
        BipartiteGraph {
            num_users: ds.num_users(),
            num_items: ds.num_items(),
            num_edges: ds.len(),
            offsets,
            adjacency,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn neighbors(&self, node: usize) -> &[(u32, u32)] {
        &self.adjacency[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes())
            .map(|v| self.degree(v))
            .max()
            .unwrap_or(0)
    }

    /// Nodes with at least one edge, ascending.
    pub fn active_nodes(&self) -> Vec<u32> {
        (0..self.num_nodes() as u32)
            .filter(|&v| self.degree(v as usize) > 0)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PageRankConfig {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        PageRankConfig {
            damping: 0.85,
            tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

/// Power-iteration pagerank over all nodes (isolated ones included). The
/// mass of dangling nodes is redistributed uniformly. Stops when the L1
/// change between iterates drops below the tolerance.
pub fn pagerank<T: Scalar>(graph: &BipartiteGraph, config: &PageRankConfig) -> (Vec<T>, usize) {
    let n = graph.num_nodes();
    if n == 0 {
        return (Vec::new(), 0);
    }
    let nf = T::of_usize(n);
    let damping = T::of(config.damping);
    let teleport = (T::one() - damping) / nf;
    let mut rank = vec![T::one() / nf; n];
    let mut next = vec![T::zero(); n];
    let inv_degree: Vec<T> = (0..n)
        .map(|v| match graph.degree(v) {
            0 => T::zero(),
            d => T::one() / T::of_usize(d),
        })
        .collect();

    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let dangling: T = (0..n)
            .filter(|&v| graph.degree(v) == 0)
            .map(|v| rank[v])
            .sum();
        let base = teleport + damping * dangling / nf;
        for (w, slot) in next.iter_mut().enumerate() {
            let inflow: T = graph
                .neighbors(w)
                .iter()
                .map(|&(v, _)| rank[v as usize] * inv_degree[v as usize])
                .sum();
            *slot = base + damping * inflow;
        }
        let delta: T = rank.iter().zip(&next).map(|(&a, &b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if delta.as_f64() < config.tolerance {
            break;
        }
    }
    (rank, iterations)
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let grand = self.parent[self.parent[x] as usize];
            self.parent[x] = grand;
            x = grand as usize;
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra as u32;
        self.size[ra] += self.size[rb];
    }

    pub fn component_size(&mut self, x: usize) -> usize {
        let r = self.find(x);
        self.size[r] as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{IdMap, Interaction};
    use std::sync::Arc;

    pub(crate) fn graph_of(
        edges: &[(u32, u32)],
        nu: usize,
        ni: usize,
    ) -> (Dataset, BipartiteGraph) {
        let its = edges
            .iter()
            .enumerate()
            .map(|(k, &(user, item))| Interaction {
                user,
                item,
                rating: 1.0,
                timestamp: k as i64,
            })
            .collect();
        let ds = Dataset::new("g", its, nu, ni, Arc::new(IdMap::default())).unwrap();
        let g = BipartiteGraph::from_dataset(&ds);
        (ds, g)
    }

    #[test]
    fn adjacency_is_symmetric() {
        let (_, g) = graph_of(&[(0, 0), (0, 1), (1, 1)], 2, 2);
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.degree(0), 2);
        assert_eq!(g.degree(3), 2);
        assert!(g.neighbors(3).contains(&(0, 1)));
        assert!(g.neighbors(3).contains(&(1, 2)));
    }

    #[test]
    fn star_center_has_highest_pagerank() {
        let edges: Vec<_> = (0..6).map(|u| (u, 0)).collect();
        let (_, g) = graph_of(&edges, 6, 1);
        let (pr, _) = pagerank::<f64>(&g, &PageRankConfig::default());
        let center = pr[6];
        assert!(pr[..6].iter().all(|&p| p < center));
        assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn isolated_nodes_receive_teleport_mass() {
        let (_, g) = graph_of(&[(0, 0), (1, 0)], 3, 2);
        let (pr, _) = pagerank::<f64>(&g, &PageRankConfig::default());
        assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(pr[2] > 0.0 && pr[4] > 0.0);
    }

    #[test]
    fn union_find_tracks_component_sizes() {
        let mut uf = UnionFind::new(5);
        uf.union(0, 1);
        uf.union(3, 4);
        uf.union(1, 4);
        assert_eq!(uf.component_size(0), 4);
        assert_eq!(uf.component_size(2), 1);
    }
}
