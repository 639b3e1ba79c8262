//! Parameters, scoring and per-example losses with analytic gradients.
//!
//! Scores: `alpha + b_u + b_i` (bias-only), plus `g_u . g_i` (MF), or plus
//! `f(g_u || g_i || g_u * g_i)` where `f` is one ReLU layer of width `2d`
//! followed by a linear head (NeuMF-lite). PopRec stores train popularity in
//! `item_bias` and ignores the user.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::Algorithm;
use crate::rng::Rng;
use crate::scalar::{dot, ln_sigmoid, sigmoid, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub hidden: usize,
    /// `hidden x 3d`, row-major.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(dim: usize) -> Self {
        let hidden = 2 * dim;
        Mlp {
            hidden,
            w1: vec![T::zero(); hidden * 3 * dim],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); hidden],
            b2: T::zero(),
        }
    }

    fn input(&self) -> usize {
        self.w1.len() / self.hidden
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub algorithm: Algorithm,
    pub dim: usize,
    pub alpha: T,
    pub user_bias: Vec<T>,
    pub item_bias: Vec<T>,
    /// `num_users x dim`, row-major.
    pub user_factors: Vec<T>,
    /// `num_items x dim`, row-major.
    pub item_factors: Vec<T>,
    pub mlp: Option<Mlp<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(algorithm: Algorithm, num_users: usize, num_items: usize, dim: usize) -> Self {
        let dim = if algorithm.has_factors() {
            dim.max(1)
        } else {
            0
        };
        ModelParams {
            algorithm,
            dim,
            alpha: T::zero(),
            user_bias: vec![T::zero(); num_users],
            item_bias: vec![T::zero(); num_items],
            user_factors: vec![T::zero(); num_users * dim],
            item_factors: vec![T::zero(); num_items * dim],
            mlp: (algorithm == Algorithm::NeuMFLite).then(|| Mlp::zeros(dim)),
        }
    }

    /// Factors drawn from N(0, 0.1^2); MLP weights Xavier-uniform.
    pub fn init(
        algorithm: Algorithm,
        num_users: usize,
        num_items: usize,
        dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut p = Self::zeros(algorithm, num_users, num_items, dim);
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        for x in p.user_factors.iter_mut().chain(p.item_factors.iter_mut()) {
            *x = T::of(normal.sample(rng));
        }
        if let Some(mlp) = p.mlp.as_mut() {
            let fan_in = mlp.input();
            let a1 = (6.0 / (fan_in + mlp.hidden) as f64).sqrt();
            for w in &mut mlp.w1 {
                *w = T::of(rng.random_range(-a1..a1));
            }
            let a2 = (6.0 / (mlp.hidden + 1) as f64).sqrt();
            for w in &mut mlp.w2 {
                *w = T::of(rng.random_range(-a2..a2));
            }
        }
        p
    }

    pub fn num_users(&self) -> usize {
        self.user_bias.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_bias.len()
    }

    pub fn user_vec(&self, u: usize) -> &[T] {
        &self.user_factors[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_vec(&self, i: usize) -> &[T] {
        &self.item_factors[i * self.dim..(i + 1) * self.dim]
    }

    /// Deterministic score. Ids outside the trained id space fall back to
    /// the bias terms that exist.
    pub fn predict(&self, user: usize, item: usize) -> T {
        let known_u = user < self.num_users();
        let known_i = item < self.num_items();
        if self.algorithm == Algorithm::PopRec {
            return if known_i {
                self.item_bias[item]
            } else {
                T::zero()
            };
        }
        let mut s = self.alpha;
        if known_u {
            s += self.user_bias[user];
        }
        if known_i {
            s += self.item_bias[item];
        }
        if !(known_u && known_i) {
            return s;
        }
        match self.algorithm {
            Algorithm::MF => s + dot(self.user_vec(user), self.item_vec(item)),
            Algorithm::NeuMFLite => {
                let mlp = self.mlp.as_ref().expect("NeuMF-lite carries an MLP");
                let mut cache = MlpCache::new(mlp.hidden, self.dim);
                s + mlp_forward(
                    mlp,
                    self.user_vec(user),
                    self.item_vec(item),
                    None,
                    &mut cache,
                )
            }
            _ => s,
        }
    }

    pub fn is_finite(&self) -> bool {
        let finite = |v: &[T]| v.iter().all(|x| x.is_finite());
        self.alpha.is_finite()
            && finite(&self.user_bias)
            && finite(&self.item_bias)
            && finite(&self.user_factors)
            && finite(&self.item_factors)
            && self
                .mlp
                .as_ref()
                .is_none_or(|m| finite(&m.w1) && finite(&m.b1) && finite(&m.w2) && m.b2.is_finite())
    }

    /// Number of scalar coordinates in the flat view used by
    /// [`ModelParams::coordinate_mut`].
    pub fn num_coordinates(&self) -> usize {
        1 + self.user_bias.len()
            + self.item_bias.len()
            + self.user_factors.len()
            + self.item_factors.len()
            + self
                .mlp
                .as_ref()
                .map_or(0, |m| m.w1.len() + m.b1.len() + m.w2.len() + 1)
    }

    /// Flat coordinate access in the order alpha, user biases, item biases,
    /// user factors, item factors, w1, b1, w2, b2.
    pub fn coordinate_mut(&mut self, mut k: usize) -> &mut T {
        if k == 0 {
            return &mut self.alpha;
        }
        k -= 1;
        for v in [
            &mut self.user_bias,
            &mut self.item_bias,
            &mut self.user_factors,
            &mut self.item_factors,
        ] {
            if k < v.len() {
                return &mut v[k];
            }
            k -= v.len();
        }
        let mlp = self.mlp.as_mut().expect("coordinate out of range");
        for v in [&mut mlp.w1, &mut mlp.b1, &mut mlp.w2] {
            if k < v.len() {
                return &mut v[k];
            }
            k -= v.len();
        }
        assert_eq!(k, 0, "coordinate out of range");
        &mut mlp.b2
    }
}

struct MlpCache<T> {
    z: Vec<T>,
    pre: Vec<T>,
    h: Vec<T>,
}

impl<T: Scalar> MlpCache<T> {
    fn new(hidden: usize, dim: usize) -> Self {
        MlpCache {
            z: vec![T::zero(); 3 * dim],
            pre: vec![T::zero(); hidden],
            h: vec![T::zero(); hidden],
        }
    }
}

/// `mask[k]` scales hidden unit `k` after the ReLU (0 or `1/(1-p)` under
/// inverted dropout).
fn mlp_forward<T: Scalar>(
    mlp: &Mlp<T>,
    gu: &[T],
    gi: &[T],
    mask: Option<&[T]>,
    c: &mut MlpCache<T>,
) -> T {
    let d = gu.len();
    c.z[..d].copy_from_slice(gu);
    c.z[d..2 * d].copy_from_slice(gi);
    for k in 0..d {
        c.z[2 * d + k] = gu[k] * gi[k];
    }
    let input = 3 * d;
    let mut out = mlp.b2;
    for j in 0..mlp.hidden {
        let pre = mlp.b1[j] + dot(&mlp.w1[j * input..(j + 1) * input], &c.z);
        c.pre[j] = pre;
        let mut h = pre.max(T::zero());
        if let Some(m) = mask {
            h *= m[j];
        }
        c.h[j] = h;
        out += mlp.w2[j] * h;
    }
    out
}

/// Accumulates `upstream * d(out)/d(.)` into the MLP gradient and the two
/// factor gradients.
#[allow(clippy::too_many_arguments)]
fn mlp_backward<T: Scalar>(
    mlp: &Mlp<T>,
    gu: &[T],
    gi: &[T],
    mask: Option<&[T]>,
    c: &MlpCache<T>,
    upstream: T,
    g: &mut Mlp<T>,
    d_gu: &mut [T],
    d_gi: &mut [T],
) {
    let d = gu.len();
    let input = 3 * d;
    g.b2 += upstream;
    for j in 0..mlp.hidden {
        g.w2[j] += upstream * c.h[j];
        if c.pre[j] <= T::zero() {
            continue;
        }
        let mut dpre = upstream * mlp.w2[j];
        if let Some(m) = mask {
            dpre *= m[j];
        }
        if dpre == T::zero() {
            continue;
        }
        g.b1[j] += dpre;
        let row = &mlp.w1[j * input..(j + 1) * input];
        let grow = &mut g.w1[j * input..(j + 1) * input];
        for (gw, &z) in grow.iter_mut().zip(&c.z) {
            *gw += dpre * z;
        }
        for k in 0..d {
            d_gu[k] += dpre * (row[k] + row[2 * d + k] * gi[k]);
            d_gi[k] += dpre * (row[d + k] + row[2 * d + k] * gu[k]);
        }
    }
}

/// One training example: a rating (squared loss) or a BPR triple.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Example {
    Rating {
        user: usize,
        item: usize,
        rating: f64,
    },
    Pair {
        user: usize,
        positive: usize,
        negative: usize,
    },
}

/// Sparse gradient of one example's loss.
#[derive(Clone, Debug)]
pub struct Gradient<T> {
    pub alpha: T,
    pub user: usize,
    pub user_bias: T,
    pub user_factors: Vec<T>,
    /// Up to two items (positive, negative).
    pub items: Vec<(usize, T, Vec<T>)>,
    pub mlp: Option<Mlp<T>>,
}

impl<T: Scalar> Gradient<T> {
    pub fn for_params(params: &ModelParams<T>) -> Self {
        Gradient {
            alpha: T::zero(),
            user: 0,
            user_bias: T::zero(),
            user_factors: vec![T::zero(); params.dim],
            items: Vec::with_capacity(2),
            mlp: params.mlp.as_ref().map(|m| Mlp::zeros(m.hidden / 2)),
        }
    }

    fn reset(&mut self, dim: usize) {
        self.alpha = T::zero();
        self.user_bias = T::zero();
        self.user_factors.iter_mut().for_each(|x| *x = T::zero());
        self.items.clear();
        let _ = dim;
        if let Some(m) = self.mlp.as_mut() {
            m.w1.iter_mut()
                .chain(m.b1.iter_mut())
                .chain(m.w2.iter_mut())
                .for_each(|x| *x = T::zero());
            m.b2 = T::zero();
        }
    }

    /// `params -= lr * self`.
    pub fn apply(&self, params: &mut ModelParams<T>, lr: T) {
        let d = params.dim;
        params.alpha -= lr * self.alpha;
        params.user_bias[self.user] -= lr * self.user_bias;
        for (x, &g) in params.user_factors[self.user * d..(self.user + 1) * d]
            .iter_mut()
            .zip(&self.user_factors)
        {
            *x -= lr * g;
        }
        for (i, gb, gv) in &self.items {
            params.item_bias[*i] -= lr * *gb;
            for (x, &g) in params.item_factors[i * d..(i + 1) * d].iter_mut().zip(gv) {
                *x -= lr * g;
            }
        }
        if let (Some(m), Some(g)) = (params.mlp.as_mut(), self.mlp.as_ref()) {
            for (x, &gx) in m.w1.iter_mut().zip(&g.w1) {
                *x -= lr * gx;
            }
            for (x, &gx) in m.b1.iter_mut().zip(&g.b1) {
                *x -= lr * gx;
            }
            for (x, &gx) in m.w2.iter_mut().zip(&g.w2) {
                *x -= lr * gx;
            }
            m.b2 -= lr * g.b2;
        }
    }

    /// Dense gradient in the flat coordinate order of
    /// [`ModelParams::coordinate_mut`].
    pub fn to_dense(&self, params: &ModelParams<T>) -> Vec<T> {
        let mut shadow = ModelParams::zeros(
            params.algorithm,
            params.num_users(),
            params.num_items(),
            params.dim,
        );
        shadow.mlp = params.mlp.as_ref().map(|m| Mlp::zeros(m.hidden / 2));
        self.apply(&mut shadow, -T::one());
        (0..shadow.num_coordinates())
            .map(|k| *shadow.coordinate_mut(k))
            .collect()
    }
}

fn l2_penalty<T: Scalar>(params: &ModelParams<T>, user: usize, items: &[usize]) -> T {
    let sq = |v: &[T]| v.iter().map(|&x| x * x).sum::<T>();
    let mut r = params.user_bias[user] * params.user_bias[user] + sq(params.user_vec(user));
    for &i in items {
        r += params.item_bias[i] * params.item_bias[i] + sq(params.item_vec(i));
    }
    if let Some(m) = &params.mlp {
        r += sq(&m.w1) + sq(&m.w2);
    }
    r
}

fn score_with_cache<T: Scalar>(
    params: &ModelParams<T>,
    u: usize,
    i: usize,
    mask: Option<&[T]>,
    cache: &mut MlpCache<T>,
) -> T {
    let base = params.alpha + params.user_bias[u] + params.item_bias[i];
    match params.algorithm {
        Algorithm::MF => base + dot(params.user_vec(u), params.item_vec(i)),
        Algorithm::NeuMFLite => {
            let mlp = params.mlp.as_ref().expect("NeuMF-lite carries an MLP");
            base + mlp_forward(mlp, params.user_vec(u), params.item_vec(i), mask, cache)
        }
        _ => base,
    }
}

/// Loss of one example (no dropout): squared error or `-ln sigmoid(x_ui - x_uj)`,
/// plus `l2` times the squared norm of the parameters it touches (global
/// bias and MLP biases excluded).
pub fn example_loss<T: Scalar>(params: &ModelParams<T>, example: &Example, l2: T) -> T {
    let mut cache = MlpCache::new(params.mlp.as_ref().map_or(0, |m| m.hidden), params.dim);
    match *example {
        Example::Rating { user, item, rating } => {
            let e = score_with_cache(params, user, item, None, &mut cache) - T::of(rating);
            e * e + l2 * l2_penalty(params, user, &[item])
        }
        Example::Pair {
            user,
            positive,
            negative,
        } => {
            let x = score_with_cache(params, user, positive, None, &mut cache)
                - score_with_cache(params, user, negative, None, &mut cache);
            -ln_sigmoid(x) + l2 * l2_penalty(params, user, &[positive, negative])
        }
    }
}

/// Loss and its analytic gradient, written into `grad`.
pub fn example_gradient<T: Scalar>(
    params: &ModelParams<T>,
    example: &Example,
    l2: T,
    mask: Option<&[T]>,
    grad: &mut Gradient<T>,
) -> T {
    let d = params.dim;
    let two = T::of(2.0);
    grad.reset(d);
    let hidden = params.mlp.as_ref().map_or(0, |m| m.hidden);
    let mut cache = MlpCache::new(hidden, d);
    let (user, items, coeffs, loss): (usize, Vec<usize>, Vec<T>, T) = match *example {
        Example::Rating { user, item, rating } => {
            let e = score_with_cache(params, user, item, mask, &mut cache) - T::of(rating);
            (user, vec![item], vec![two * e], e * e)
        }
        Example::Pair {
            user,
            positive,
            negative,
        } => {
            let mut c2 = MlpCache::new(hidden, d);
            let x = score_with_cache(params, user, positive, mask, &mut cache)
                - score_with_cache(params, user, negative, mask, &mut c2);
            // d/dx of -ln sigmoid(x) = -sigmoid(-x)
            let g = -sigmoid(-x);
            (user, vec![positive, negative], vec![g, -g], -ln_sigmoid(x))
        }
    };

    grad.user = user;
    for (&c, &i) in coeffs.iter().zip(&items) {
        grad.alpha += c;
        grad.user_bias += c;
        let mut d_gi = vec![T::zero(); d];
        match params.algorithm {
            Algorithm::MF => {
                let (gu, gi) = (params.user_vec(user), params.item_vec(i));
                for k in 0..d {
                    grad.user_factors[k] += c * gi[k];
                    d_gi[k] += c * gu[k];
                }
            }
            Algorithm::NeuMFLite => {
                let mlp = params.mlp.as_ref().expect("NeuMF-lite carries an MLP");
                let (gu, gi) = (params.user_vec(user), params.item_vec(i));
                // recompute the forward pass for this item to refresh the cache
                mlp_forward(mlp, gu, gi, mask, &mut cache);
                let g = grad.mlp.as_mut().expect("gradient shaped for MLP");
                mlp_backward(
                    mlp,
                    gu,
                    gi,
                    mask,
                    &cache,
                    c,
                    g,
                    &mut grad.user_factors,
                    &mut d_gi,
                );
            }
            _ => {}
        }
        grad.items.push((i, c, d_gi));
    }

    // regularization
    grad.user_bias += two * l2 * params.user_bias[user];
    for (g, &x) in grad.user_factors.iter_mut().zip(params.user_vec(user)) {
        *g += two * l2 * x;
    }
    for (i, gb, gv) in grad.items.iter_mut() {
        *gb += two * l2 * params.item_bias[*i];
        for (g, &x) in gv.iter_mut().zip(params.item_vec(*i)) {
            *g += two * l2 * x;
        }
    }
    if let (Some(g), Some(m)) = (grad.mlp.as_mut(), params.mlp.as_ref()) {
        for (gx, &x) in g.w1.iter_mut().zip(&m.w1) {
            *gx += two * l2 * x;
        }
        for (gx, &x) in g.w2.iter_mut().zip(&m.w2) {
            *gx += two * l2 * x;
        }
    }
    loss + l2 * l2_penalty(params, user, &items)
}

/// Batch scorer for ranking every item for one user. NeuMF-lite item-side
/// pre-activations are computed once per scorer.
pub struct Scorer<'a, T> {
    params: &'a ModelParams<T>,
    item_pre: Vec<T>,
}

impl<'a, T: Scalar> Scorer<'a, T> {
    pub fn new(params: &'a ModelParams<T>) -> Self {
        let mut item_pre = Vec::new();
        if let Some(mlp) = &params.mlp {
            let d = params.dim;
            let input = 3 * d;
            item_pre = vec![T::zero(); params.num_items() * mlp.hidden];
            for i in 0..params.num_items() {
                let gi = params.item_vec(i);
                for j in 0..mlp.hidden {
                    item_pre[i * mlp.hidden + j] =
                        dot(&mlp.w1[j * input + d..j * input + 2 * d], gi);
                }
            }
        }
        Scorer { params, item_pre }
    }

    pub fn params(&self) -> &ModelParams<T> {
        self.params
    }

    /// Scores of all items for `user`, written into `out`.
    pub fn score_user(&self, user: usize, out: &mut [T]) {
        let p = self.params;
        let ni = p.num_items();
        debug_assert_eq!(out.len(), ni);
        if p.algorithm == Algorithm::PopRec {
            out.copy_from_slice(&p.item_bias);
            return;
        }
        if user >= p.num_users() {
            for (o, &b) in out.iter_mut().zip(&p.item_bias) {
                *o = p.alpha + b;
            }
            return;
        }
        let base = p.alpha + p.user_bias[user];
        match p.algorithm {
            Algorithm::BiasOnly => {
                for (o, &b) in out.iter_mut().zip(&p.item_bias) {
                    *o = base + b;
                }
            }
            Algorithm::MF => {
                let gu = p.user_vec(user);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = base + p.item_bias[i] + dot(gu, p.item_vec(i));
                }
            }
            Algorithm::NeuMFLite => {
                let mlp = p.mlp.as_ref().expect("NeuMF-lite carries an MLP");
                let d = p.dim;
                let input = 3 * d;
                let gu = p.user_vec(user);
                let h = mlp.hidden;
                let mut user_pre = vec![T::zero(); h];
                let mut cross = vec![T::zero(); h * d];
                for j in 0..h {
                    let row = &mlp.w1[j * input..(j + 1) * input];
                    user_pre[j] = mlp.b1[j] + dot(&row[..d], gu);
                    for k in 0..d {
                        cross[j * d + k] = row[2 * d + k] * gu[k];
                    }
                }
                for (i, o) in out.iter_mut().enumerate() {
                    let gi = p.item_vec(i);
                    let pre_i = &self.item_pre[i * h..(i + 1) * h];
                    let mut f = mlp.b2;
                    for j in 0..h {
                        let pre = user_pre[j] + pre_i[j] + dot(&cross[j * d..(j + 1) * d], gi);
                        if pre > T::zero() {
                            f += mlp.w2[j] * pre;
                        }
                    }
                    *o = base + p.item_bias[i] + f;
                }
            }
            Algorithm::PopRec => unreachable!(),
        }
    }
}
