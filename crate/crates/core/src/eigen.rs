//! Extremal eigenvalues of large sparse symmetric matrices: Lanczos with
//! full reorthogonalization, restarted on invariant subspaces, and an
//! implicit QL solver for the tridiagonal projection.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{dot, Scalar};

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e` (`e[i]` couples `i` and `i + 1`; `e.len() >= d.len() - 1`).
/// Each vector in `rows` is treated as a row of the identity and receives
/// the same rotations, so `rows = [e_k]` yields row `k` of the eigenvector
/// matrix. Returns the unsorted eigenvalues.
pub fn tridiagonal_eigen<T: Scalar>(d: &[T], e: &[T], rows: &mut [Vec<T>]) -> Result<Vec<T>> {
    let n = d.len();
    let mut d = d.to_vec();
    let mut e: Vec<T> = e.iter().copied().take(n.saturating_sub(1)).collect();
    e.resize(n, T::zero());
    let eps = T::epsilon();
    let two = T::of(2.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= eps * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::EigenNoConvergence { iterations: iter });
            }
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(T::one());
            let shift = if g >= T::zero() { r.abs() } else { -r.abs() };
            g = d[m] - d[l] + e[l] / (g + shift);
            let (mut s, mut c, mut p) = (T::one(), T::one(), T::zero());
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] -= p;
                    e[m] = T::zero();
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in rows.iter_mut() {
                    let f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    Ok(d)
}

#[derive(Clone, Copy, Debug)]
pub struct LanczosConfig {
    /// Relative residual below which a Ritz value counts as converged.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        LanczosConfig {
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

fn random_unit<T: Scalar>(n: usize, basis: &[Vec<T>], r: &mut rng::Rng) -> Option<Vec<T>> {
    for _ in 0..8 {
        let mut v: Vec<T> = (0..n).map(|_| T::of(StandardNormal.sample(r))).collect();
        for _ in 0..2 {
            for q in basis {
                let c = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(x, &y)| *x -= c * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > T::of(1e-8) {
            v.iter_mut().for_each(|x| *x /= norm);
            return Some(v);
        }
    }
    None
}

/// The `k` eigenvalues of largest magnitude of the `n × n` symmetric
/// operator `apply` (writes `A x` into its second argument), sorted by
/// descending magnitude. Fewer are returned only when `n < k`.
pub fn top_eigenvalues<T: Scalar>(
    n: usize,
    k: usize,
    apply: impl Fn(&[T], &mut [T]),
    config: &LanczosConfig,
) -> Result<Vec<T>> {
    if n == 0 || k == 0 {
        return Ok(Vec::new());
    }
    let k = k.min(n);
    let mut r = rng::rng(config.seed, "lanczos");
    let mut basis: Vec<Vec<T>> = Vec::new();
    let mut alpha: Vec<T> = Vec::new();
    let mut beta: Vec<T> = Vec::new();
    let mut q = random_unit(n, &basis, &mut r).expect("nonzero space");
    let mut w = vec![T::zero(); n];
    let mut target = n.min((2 * k + 20).max(40));
    let tol = T::of(config.tolerance);
    loop {
        while alpha.len() < target {
            apply(&q, &mut w);
            let a = dot(&q, &w);
            alpha.push(a);
            w.iter_mut().zip(&q).for_each(|(x, &y)| *x -= a * y);
            if let (Some(prev), Some(&b)) = (basis.last(), beta.last()) {
                w.iter_mut().zip(prev).for_each(|(x, &y)| *x -= b * y);
            }
            basis.push(std::mem::take(&mut q));
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &w);
                    w.iter_mut().zip(v).for_each(|(x, &y)| *x -= c * y);
                }
            }
            if basis.len() == n {
                beta.push(T::zero());
                break;
            }
            let b = dot(&w, &w).sqrt();
            if b <= T::of(1e-10) * alpha.iter().fold(T::one(), |m, &x| m.max(x.abs())) {
                // invariant subspace: continue in a fresh orthogonal direction
                beta.push(T::zero());
                match random_unit(n, &basis, &mut r) {
                    Some(v) => q = v,
                    None => break,
                }
            } else {
                beta.push(b);
                q = w.iter().map(|&x| x / b).collect();
            }
            w.iter_mut().for_each(|x| *x = T::zero());
        }
        let m = alpha.len();
        let mut last = vec![T::zero(); m];
        last[m - 1] = T::one();
        let mut rows = vec![last];
        let theta = tridiagonal_eigen(&alpha, &beta[..m - 1], &mut rows)?;
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&a, &b| theta[b].abs().total_cmp_s(&theta[a].abs()));
        let scale = theta.iter().fold(T::one(), |s, &x| s.max(x.abs()));
        let b_last = beta[m - 1];
        let converged = idx
            .iter()
            .take(k)
            .all(|&j| (b_last * rows[0][j]).abs() <= tol * scale);
        if converged || m >= n || basis.len() == n {
            return Ok(idx.iter().take(k).map(|&j| theta[j]).collect());
        }
        target = n.min(target + k.max(50));
    }
}

trait TotalCmp {
    fn total_cmp_s(&self, other: &Self) -> std::cmp::Ordering;
}

impl<T: Scalar> TotalCmp for T {
    fn total_cmp_s(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).unwrap_or(std::cmp::Ordering::Equal)
    }
}
