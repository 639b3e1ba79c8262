#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng as _;
use recsample::dataset::{Dataset, IdMap, Interaction};
use recsample::rng;

/// Random interactions with ratings driven by two latent factors, so that
/// trained models differ in quality. Every user gets between `min_deg` and
/// `max_deg` distinct items.
pub fn synthetic(
    name: &str,
    users: usize,
    items: usize,
    min_deg: usize,
    max_deg: usize,
    seed: u64,
) -> Dataset {
    let mut r = rng::rng(seed, "synthetic");
    let uf: Vec<[f64; 2]> = (0..users)
        .map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
        .collect();
    let vf: Vec<[f64; 2]> = (0..items)
        .map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
        .collect();
    let pop: Vec<f64> = (0..items).map(|i| 1.0 / (1.0 + i as f64).sqrt()).collect();
    let mut its = Vec::new();
    for u in 0..users {
        let deg = r.random_range(min_deg..=max_deg.min(items));
        let mut chosen = BTreeSet::new();
        while chosen.len() < deg {
            // popularity-skewed item choice
            let i = r.random_range(0..items);
            if r.random::<f64>() < pop[i].max(0.2) {
                chosen.insert(i);
            }
        }
        let mut order: Vec<usize> = chosen.into_iter().collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
        for (t, i) in order.into_iter().enumerate() {
            let affinity = uf[u][0] * vf[i][0] + uf[u][1] * vf[i][1];
            let rating = (3.0 + 2.5 * affinity + r.random_range(-0.5..0.5))
                .round()
                .clamp(1.0, 5.0);
            its.push(Interaction {
                user: u as u32,
                item: i as u32,
                rating,
                timestamp: (u * 1000 + t) as i64,
            });
        }
    }
    Dataset::new(name, its, users, items, Arc::new(IdMap::default())).unwrap()
}

/// Bipartite dataset with each (user, item) edge present independently.
pub fn random_bipartite(users: usize, items: usize, density: f64, seed: u64) -> Dataset {
    let mut r = rng::rng(seed, "bipartite");
    let mut its = Vec::new();
    for u in 0..users {
        for i in 0..items {
            if r.random::<f64>() < density {
                its.push(Interaction {
                    user: u as u32,
                    item: i as u32,
                    rating: 1.0,
                    timestamp: its.len() as i64,
                });
            }
        }
    }
    if its.is_empty() {
        its.push(Interaction {
            user: 0,
            item: 0,
            rating: 1.0,
            timestamp: 0,
        });
    }
    Dataset::new("bipartite", its, users, items, Arc::new(IdMap::default())).unwrap()
}

pub fn dense_adjacency(ds: &Dataset) -> Vec<Vec<f64>> {
    let n = ds.num_users() + ds.num_items();
    let mut a = vec![vec![0.0; n]; n];
    for it in ds.interactions() {
        let (u, i) = (it.user as usize, ds.num_users() + it.item as usize);
        a[u][i] += 1.0;
        a[i][u] += 1.0;
    }
    a
}

/// Cyclic Jacobi rotations; returns every eigenvalue of a symmetric matrix.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Tau-b from all O(n²) pairs; both sides fully tied counts as agreement,
/// one side fully tied as no correlation.
pub fn brute_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).signum() * f64::from(u8::from(x[i] != x[j]));
            let b = (y[i] - y[j]).signum() * f64::from(u8::from(y[i] != y[j]));
            if a == 0.0 {
                tx += 1;
            }
            if b == 0.0 {
                ty += 1;
            }
            if a * b > 0.0 {
                c += 1;
            } else if a * b < 0.0 {
                d += 1;
            }
        }
    }
    let n0 = (n * (n.saturating_sub(1)) / 2) as i64;
    if tx == n0 && ty == n0 {
        return 1.0;
    }
    if tx == n0 || ty == n0 {
        return 0.0;
    }
    (c - d) as f64 / (((n0 - tx) * (n0 - ty)) as f64).sqrt()
}

pub fn permutations(n: usize) -> Vec<Vec<f64>> {
    fn go(prefix: &mut Vec<f64>, rest: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..rest.len() {
            let v = rest.remove(k);
            prefix.push(v);
            go(prefix, rest, out);
            prefix.pop();
            rest.insert(k, v);
        }
    }
    let mut out = Vec::new();
    go(
        &mut Vec::new(),
        &mut (0..n).map(|k| k as f64).collect(),
        &mut out,
    );
    out
}
