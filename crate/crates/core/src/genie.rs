//! Meta-learner predicting how well a sample preserves the algorithm
//! ranking of its parent dataset, from the two dataset embeddings and the
//! target metric.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::benchmark::TauRecord;
use crate::dataset::{Dataset, Scenario};
use crate::error::{Error, Result};
use crate::featurizer::{featurize, FeaturizeConfig, NormStats, EMBEDDING_DIM};
use crate::recommenders::Metric;
use crate::rng;
use crate::samplers::SamplerSpec;
use crate::scalar::Scalar;
use crate::svp::{draw_any, ProxyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenieMode {
    Regression,
    Ranking,
}

impl std::str::FromStr for GenieMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(GenieMode::Regression),
            "ranking" => Ok(GenieMode::Ranking),
            _ => Err(Error::Config(format!(
                "unknown genie mode {s:?} (regression|ranking)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenieExample {
    pub dataset: String,
    pub scenario: Scenario,
    pub sampler: String,
    pub percent: f64,
    pub metric: Metric,
    pub full_embedding: Vec<f64>,
    pub sample_embedding: Vec<f64>,
    pub target_tau: f64,
}

type GroupKey = (String, Scenario, Metric, u64);

impl GenieExample {
    fn group(&self) -> GroupKey {
        (
            self.dataset.clone(),
            self.scenario,
            self.metric,
            (self.percent * 1000.0).round() as u64,
        )
    }

    fn mp(&self) -> (Metric, u64) {
        (self.metric, (self.percent * 1000.0).round() as u64)
    }
}

pub fn metric_onehot(metric: Metric) -> [f64; 4] {
    let mut v = [0.0; 4];
    v[metric.index()] = 1.0;
    v
}

/// Key used to look up the embedding of a sample.
pub fn sample_key(dataset: &str, scenario: Scenario, sampler: &str, percent: f64) -> String {
    format!("{dataset}/{scenario}/{sampler}/{percent}")
}

/// Key of the embedding of a full (unsampled) train set.
pub fn full_key(dataset: &str, scenario: Scenario) -> String {
    format!("{dataset}/{scenario}/FULL")
}

/// One example per tau record whose two embeddings are known.
pub fn build_meta_dataset(
    taus: &[TauRecord],
    embeddings: &BTreeMap<String, Vec<f64>>,
) -> Vec<GenieExample> {
    let mut out = Vec::with_capacity(taus.len());
    for t in taus {
        let fk = full_key(&t.dataset, t.scenario);
        let sk = sample_key(&t.dataset, t.scenario, &t.sampler, t.percent);
        match (embeddings.get(&fk), embeddings.get(&sk)) {
            (Some(f), Some(s)) => out.push(GenieExample {
                dataset: t.dataset.clone(),
                scenario: t.scenario,
                sampler: t.sampler.clone(),
                percent: t.percent,
                metric: t.metric,
                full_embedding: f.clone(),
                sample_embedding: s.clone(),
                target_tau: t.tau,
            }),
            _ => log::warn!("missing embedding for {sk}; example skipped"),
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetaSplit {
    pub train: Vec<GenieExample>,
    pub validation: Vec<GenieExample>,
    pub test: Vec<GenieExample>,
}

/// Partitions the distinct (metric, percent) pairs 70/15/15 (train gets
/// `round(0.7 n)`, validation `floor(0.15 n)`, test the rest) and routes
/// each example by its pair.
pub fn split_meta_dataset(examples: &[GenieExample], seed: u64) -> MetaSplit {
    let mut pairs: Vec<(Metric, u64)> = examples
        .iter()
        .map(|e| e.mp())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    pairs.shuffle(&mut rng::rng(seed, "genie/split"));
    let n = pairs.len();
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = (0.15 * n as f64).floor() as usize;
    let train: BTreeSet<_> = pairs[..n_train].iter().copied().collect();
    let val: BTreeSet<_> = pairs[n_train..(n_train + n_val).min(n)]
        .iter()
        .copied()
        .collect();
    let mut split = MetaSplit::default();
    for e in examples {
        let k = e.mp();
        if train.contains(&k) {
            split.train.push(e.clone());
        } else if val.contains(&k) {
            split.validation.push(e.clone());
        } else {
            split.test.push(e.clone());
        }
    }
    split
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenieConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub check_every: usize,
}

impl Default for GenieConfig {
    fn default() -> Self {
        GenieConfig {
            hidden: 32,
            learning_rate: 1e-3,
            max_steps: 2000,
            patience: 20,
            check_every: 10,
        }
    }
}

/// Two ReLU layers and a scalar head over
/// `[norm(full) ‖ norm(sample) ‖ onehot(metric)]`. All weights live in one
/// flat vector: `W1 (H×in), b1, W2 (H×H), b2, w3 (H), b3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: DeserializeOwned"))]
pub struct GenieModel<T> {
    pub mode: GenieMode,
    pub input: usize,
    pub hidden: usize,
    pub weights: Vec<T>,
    pub stats: NormStats,
    /// Position of each metric in the one-hot block.
    pub metric_index: BTreeMap<Metric, usize>,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

fn layout(input: usize, h: usize) -> Layout {
    let w1 = 0;
    let b1 = w1 + h * input;
    let w2 = b1 + h;
    let b2 = w2 + h * h;
    let w3 = b2 + h;
    let b3 = w3 + h;
    Layout {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        len: b3 + 1,
    }
}

pub const INPUT_DIM: usize = 2 * EMBEDDING_DIM + 4;

impl<T: Scalar> GenieModel<T> {
    pub fn init(mode: GenieMode, input: usize, hidden: usize, stats: NormStats, seed: u64) -> Self {
        let l = layout(input, hidden);
        let mut r = rng::rng(seed, "genie/init");
        let mut weights = vec![T::zero(); l.len];
        let a1 = (6.0 / input as f64).sqrt();
        let a2 = (6.0 / hidden as f64).sqrt();
        for w in &mut weights[l.w1..l.b1] {
            *w = T::of(r.random_range(-a1..a1));
        }
        for w in &mut weights[l.w2..l.b2] {
            *w = T::of(r.random_range(-a2..a2));
        }
        for w in &mut weights[l.w3..l.b3] {
            *w = T::of(r.random_range(-a2..a2) * 0.1);
        }
        GenieModel {
            mode,
            input,
            hidden,
            weights,
            stats,
            metric_index: Metric::ALL.iter().map(|m| (*m, m.index())).collect(),
        }
    }

    pub fn features(&self, e: &GenieExample) -> Vec<T> {
        let mut x: Vec<T> = self
            .stats
            .normalize(&e.full_embedding)
            .into_iter()
            .map(T::of)
            .collect();
        x.extend(
            self.stats
                .normalize(&e.sample_embedding)
                .into_iter()
                .map(T::of),
        );
        let mut onehot = vec![T::zero(); self.metric_index.len()];
        onehot[self.metric_index[&e.metric]] = T::one();
        x.extend(onehot);
        x
    }

    /// Raw head output.
    pub fn forward(&self, x: &[T]) -> T {
        self.forward_cached(x).2
    }

    fn forward_cached(&self, x: &[T]) -> (Vec<T>, Vec<T>, T) {
        let (h, w) = (self.hidden, &self.weights);
        let l = layout(self.input, h);
        let h1: Vec<T> = (0..h)
            .map(|j| {
                let row = &w[l.w1 + j * self.input..l.w1 + (j + 1) * self.input];
                (crate::scalar::dot(row, x) + w[l.b1 + j]).max(T::zero())
            })
            .collect();
        let h2: Vec<T> = (0..h)
            .map(|j| {
                let row = &w[l.w2 + j * h..l.w2 + (j + 1) * h];
                (crate::scalar::dot(row, &h1) + w[l.b2 + j]).max(T::zero())
            })
            .collect();
        let o = crate::scalar::dot(&w[l.w3..l.b3], &h2) + w[l.b3];
        (h1, h2, o)
    }

    fn backward(&self, x: &[T], h1: &[T], h2: &[T], g: T, grad: &mut [T]) {
        let (h, w) = (self.hidden, &self.weights);
        let l = layout(self.input, h);
        let mut dh2 = vec![T::zero(); h];
        for j in 0..h {
            grad[l.w3 + j] += g * h2[j];
            if h2[j] > T::zero() {
                dh2[j] = g * w[l.w3 + j];
            }
        }
        grad[l.b3] += g;
        let mut dh1 = vec![T::zero(); h];
        for j in 0..h {
            if dh2[j] == T::zero() {
                continue;
            }
            grad[l.b2 + j] += dh2[j];
            for k in 0..h {
                grad[l.w2 + j * h + k] += dh2[j] * h1[k];
                dh1[k] += dh2[j] * w[l.w2 + j * h + k];
            }
        }
        for j in 0..h {
            if h1[j] <= T::zero() || dh1[j] == T::zero() {
                continue;
            }
            grad[l.b1 + j] += dh1[j];
            let row = &mut grad[l.w1 + j * self.input..l.w1 + (j + 1) * self.input];
            for (gk, &xk) in row.iter_mut().zip(x) {
                *gk += dh1[j] * xk;
            }
        }
    }

    /// τ̂: tanh-bounded in regression mode, an unbounded score in ranking mode.
    pub fn predict_features(&self, x: &[T]) -> T {
        let o = self.forward(x);
        match self.mode {
            GenieMode::Regression => o.tanh(),
            GenieMode::Ranking => o,
        }
    }

    pub fn predict(&self, e: &GenieExample) -> f64 {
        self.predict_features(&self.features(e)).as_f64()
    }
}

/// Training objective over pre-computed inputs: mean squared error of the
/// tanh output (regression) or mean `-ln σ(τ̂_i − τ̂_j)` over ordered pairs
/// (ranking). Returns the loss and its gradient.
pub fn genie_loss_grad<T: Scalar>(
    model: &GenieModel<T>,
    inputs: &[Vec<T>],
    targets: &[T],
    pairs: &[(usize, usize)],
) -> (T, Vec<T>) {
    let mut grad = vec![T::zero(); model.weights.len()];
    let cached: Vec<(Vec<T>, Vec<T>, T)> = inputs.iter().map(|x| model.forward_cached(x)).collect();
    let mut loss = T::zero();
    match model.mode {
        GenieMode::Regression => {
            let n = T::of_usize(inputs.len().max(1));
            for (k, (h1, h2, o)) in cached.iter().enumerate() {
                let y = o.tanh();
                let diff = y - targets[k];
                loss += diff * diff / n;
                let g = T::of(2.0) * diff * (T::one() - y * y) / n;
                model.backward(&inputs[k], h1, h2, g, &mut grad);
            }
        }
        GenieMode::Ranking => {
            let n = T::of_usize(pairs.len().max(1));
            let mut dout = vec![T::zero(); inputs.len()];
            for &(i, j) in pairs {
                let d = cached[i].2 - cached[j].2;
                loss -= crate::scalar::ln_sigmoid(d) / n;
                let g = -crate::scalar::sigmoid(-d) / n;
                dout[i] += g;
                dout[j] -= g;
            }
            for (k, (h1, h2, _)) in cached.iter().enumerate() {
                if dout[k] != T::zero() {
                    model.backward(&inputs[k], h1, h2, dout[k], &mut grad);
                }
            }
        }
    }
    (loss, grad)
}

pub fn genie_loss<T: Scalar>(
    model: &GenieModel<T>,
    inputs: &[Vec<T>],
    targets: &[T],
    pairs: &[(usize, usize)],
) -> T {
    genie_loss_grad(model, inputs, targets, pairs).0
}

/// Ordered pairs `(i, j)` within one (dataset, scenario, metric, percent)
/// group with `tau_i > tau_j`.
pub fn ranking_pairs(examples: &[GenieExample]) -> Vec<(usize, usize)> {
    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (k, e) in examples.iter().enumerate() {
        groups.entry(e.group()).or_default().push(k);
    }
    let mut pairs = Vec::new();
    for members in groups.values() {
        for &i in members {
            for &j in members {
                if examples[i].target_tau > examples[j].target_tau {
                    pairs.push((i, j));
                }
            }
        }
    }
    pairs
}

fn pairwise_accuracy(scores: &[f64], pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs
        .iter()
        .filter(|&&(i, j)| scores[i] > scores[j])
        .count() as f64
        / pairs.len() as f64
}

/// Fits the normalization on the training embeddings, then runs full-batch
/// Adam with early stopping on validation MSE (regression) or pairwise
/// accuracy (ranking). Returns the best-validation weights.
pub fn train_genie<T: Scalar>(
    train: &[GenieExample],
    validation: &[GenieExample],
    mode: GenieMode,
    config: &GenieConfig,
    seed: u64,
) -> Result<GenieModel<T>> {
    if train.is_empty() {
        return Err(Error::Config("genie needs training examples".into()));
    }
    let rows: Vec<Vec<f64>> = train
        .iter()
        .flat_map(|e| [e.full_embedding.clone(), e.sample_embedding.clone()])
        .collect();
    let stats = NormStats::fit(&rows)?;
    let input = 2 * rows[0].len() + Metric::ALL.len();
    let mut model = GenieModel::<T>::init(mode, input, config.hidden, stats, seed);
    let inputs: Vec<Vec<T>> = train.iter().map(|e| model.features(e)).collect();
    let targets: Vec<T> = train.iter().map(|e| T::of(e.target_tau)).collect();
    let pairs = if mode == GenieMode::Ranking {
        ranking_pairs(train)
    } else {
        Vec::new()
    };
    if mode == GenieMode::Ranking && pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    let val_inputs: Vec<Vec<T>> = validation.iter().map(|e| model.features(e)).collect();
    let val_pairs = if mode == GenieMode::Ranking {
        ranking_pairs(validation)
    } else {
        Vec::new()
    };
    let can_validate = match mode {
        GenieMode::Regression => !validation.is_empty(),
        GenieMode::Ranking => !val_pairs.is_empty(),
    };
    // lower is better
    let val_score = |m: &GenieModel<T>| -> f64 {
        let preds: Vec<f64> = val_inputs
            .iter()
            .map(|x| m.predict_features(x).as_f64())
            .collect();
        match mode {
            GenieMode::Regression => {
                preds
                    .iter()
                    .zip(validation)
                    .map(|(p, e)| (p - e.target_tau).powi(2))
                    .sum::<f64>()
                    / preds.len() as f64
            }
            GenieMode::Ranking => -pairwise_accuracy(&preds, &val_pairs),
        }
    };

    let lr = T::of(config.learning_rate);
    let (b1, b2, eps) = (T::of(0.9), T::of(0.999), T::of(1e-8));
    let mut m1 = vec![T::zero(); model.weights.len()];
    let mut m2 = vec![T::zero(); model.weights.len()];
    let mut best = (f64::INFINITY, model.weights.clone());
    let mut stale = 0;
    for step in 1..=config.max_steps {
        let (loss, grad) = genie_loss_grad(&model, &inputs, &targets, &pairs);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch: step });
        }
        let c1 = T::one() - b1.powi(step as i32);
        let c2 = T::one() - b2.powi(step as i32);
        for k in 0..grad.len() {
            m1[k] = b1 * m1[k] + (T::one() - b1) * grad[k];
            m2[k] = b2 * m2[k] + (T::one() - b2) * grad[k] * grad[k];
            let mhat = m1[k] / c1;
            let vhat = m2[k] / c2;
            model.weights[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
        if can_validate && step % config.check_every.max(1) == 0 {
            let v = val_score(&model);
            if v < best.0 {
                best = (v, model.weights.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }
    if can_validate && best.0.is_finite() {
        model.weights = best.1;
    }
    Ok(model)
}

/// P@1 over (dataset, scenario, metric, percent) groups: 1 when the
/// top-scored sampler has the (possibly tied) highest true tau.
pub fn p_at_1(examples: &[GenieExample], scores: &[f64]) -> Result<f64> {
    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (k, e) in examples.iter().enumerate() {
        groups.entry(e.group()).or_default().push(k);
    }
    if groups.is_empty() {
        return Err(Error::EmptyCells("no test groups".into()));
    }
    let mut hits = 0.0;
    for members in groups.values() {
        let top = *members
            .iter()
            .max_by(|&&a, &&b| {
                scores[a]
                    .total_cmp(&scores[b])
                    .then_with(|| examples[b].sampler.cmp(&examples[a].sampler))
            })
            .expect("non-empty group");
        let best = members
            .iter()
            .map(|&k| examples[k].target_tau)
            .fold(f64::NEG_INFINITY, f64::max);
        if examples[top].target_tau == best {
            hits += 1.0;
        }
    }
    Ok(hits / groups.len() as f64)
}

/// Expected P@1 of picking a sampler uniformly at random in every group.
pub fn random_baseline(examples: &[GenieExample]) -> Result<f64> {
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for e in examples {
        groups.entry(e.group()).or_default().push(e.target_tau);
    }
    if groups.is_empty() {
        return Err(Error::EmptyCells("no test groups".into()));
    }
    let total: f64 = groups
        .values()
        .map(|t| {
            let best = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            t.iter().filter(|&&x| x == best).count() as f64 / t.len() as f64
        })
        .sum();
    Ok(total / groups.len() as f64)
}

/// Always picks the sampler with the highest mean tau on the training set.
pub fn best_static_baseline(train: &[GenieExample], test: &[GenieExample]) -> Result<f64> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for e in train {
        let s = sums.entry(e.sampler.as_str()).or_insert((0.0, 0));
        s.0 += e.target_tau;
        s.1 += 1;
    }
    let best = sums
        .iter()
        .map(|(s, (t, c))| (*s, t / *c as f64))
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|x| x.0.to_string())
        .ok_or_else(|| Error::Config("empty training set".into()))?;
    let scores: Vec<f64> = test
        .iter()
        .map(|e| if e.sampler == best { 1.0 } else { 0.0 })
        .collect();
    p_at_1(test, &scores)
}

/// Ordinary least squares on the genie's input features (normal equations
/// with a tiny ridge for numerical safety); returns test P@1.
pub fn least_squares_baseline(train: &[GenieExample], test: &[GenieExample]) -> Result<f64> {
    let rows: Vec<Vec<f64>> = train
        .iter()
        .flat_map(|e| [e.full_embedding.clone(), e.sample_embedding.clone()])
        .collect();
    let stats = NormStats::fit(&rows)?;
    let shell = GenieModel::<f64>::init(GenieMode::Regression, 1, 1, stats, 0);
    let feat = |e: &GenieExample| {
        let mut x = shell.features(e);
        x.push(1.0);
        x
    };
    let xs: Vec<Vec<f64>> = train.iter().map(feat).collect();
    let d = xs[0].len();
    let mut a = vec![vec![0.0; d]; d];
    let mut b = vec![0.0; d];
    for (x, e) in xs.iter().zip(train) {
        for i in 0..d {
            b[i] += x[i] * e.target_tau;
            for j in 0..d {
                a[i][j] += x[i] * x[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1e-6;
    }
    let w = solve_spd(a, b)?;
    let scores: Vec<f64> = test
        .iter()
        .map(|e| crate::scalar::dot(&feat(e), &w))
        .collect();
    p_at_1(test, &scores)
}

/// Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve_spd(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .expect("non-empty");
        if a[p][c].abs() < 1e-300 {
            return Err(Error::Config("singular normal equations".into()));
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            if f == 0.0 {
                continue;
            }
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenieEval {
    pub mode: GenieMode,
    pub p_at_1: f64,
    /// Regression mode only.
    pub mse: Option<f64>,
    pub groups: usize,
    pub random: f64,
    pub best_static: f64,
    pub least_squares: f64,
}

pub fn evaluate_genie<T: Scalar>(
    model: &GenieModel<T>,
    train: &[GenieExample],
    test: &[GenieExample],
) -> Result<GenieEval> {
    let scores: Vec<f64> = test.iter().map(|e| model.predict(e)).collect();
    let p1 = p_at_1(test, &scores)?;
    let groups = test
        .iter()
        .map(|e| e.group())
        .collect::<BTreeSet<_>>()
        .len();
    let mse = (model.mode == GenieMode::Regression).then(|| {
        scores
            .iter()
            .zip(test)
            .map(|(s, e)| (s - e.target_tau).powi(2))
            .sum::<f64>()
            / test.len() as f64
    });
    Ok(GenieEval {
        mode: model.mode,
        p_at_1: p1,
        mse,
        groups,
        random: random_baseline(test)?,
        best_static: best_static_baseline(train, test)?,
        least_squares: least_squares_baseline(train, test)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSampler {
    pub sampler: String,
    pub tau_hat: f64,
    /// Ranking-mode scores only order samplers; they are not taus.
    pub relative_only: bool,
}

/// Ranked candidates plus `(sampler, error)` for those that failed.
pub type Ranking = (Vec<RankedSampler>, Vec<(String, String)>);

#[derive(Clone, Copy)]
pub struct RankContext<'a> {
    pub train: &'a Dataset,
    pub scenario: Scenario,
    pub metric: Metric,
    pub featurize: &'a FeaturizeConfig,
    pub proxy: &'a ProxyConfig,
}

/// Scores each candidate sample and sorts by τ̂ descending (ties by name).
/// Candidates whose sampler fails are returned separately with the error.
pub fn rank_samplers<T: Scalar>(
    model: &GenieModel<T>,
    ctx: RankContext<'_>,
    candidates: &[SamplerSpec],
) -> Result<Ranking> {
    let full = featurize::<T>(ctx.train, ctx.featurize)?.to_vec();
    let results: Vec<(String, Result<Vec<f64>>)> = candidates
        .par_iter()
        .map(|spec| {
            let emb = draw_any::<T>(ctx.train, ctx.scenario, spec, ctx.proxy)
                .and_then(|r| featurize::<T>(&r.subset, ctx.featurize))
                .map(|e| e.to_vec());
            (spec.name(), emb)
        })
        .collect();
    let percent = candidates.first().map_or(100.0, |s| s.percent);
    let mut ranked = Vec::new();
    let mut failed = Vec::new();
    for (name, emb) in results {
        match emb {
            Ok(sample_embedding) => {
                let e = GenieExample {
                    dataset: ctx.train.name().to_string(),
                    scenario: ctx.scenario,
                    sampler: name.clone(),
                    percent,
                    metric: ctx.metric,
                    full_embedding: full.clone(),
                    sample_embedding,
                    target_tau: 0.0,
                };
                ranked.push(RankedSampler {
                    sampler: name,
                    tau_hat: model.predict(&e),
                    relative_only: model.mode == GenieMode::Ranking,
                });
            }
            Err(err) => failed.push((name, err.to_string())),
        }
    }
    sort_ranked(&mut ranked);
    Ok((ranked, failed))
}

pub fn sort_ranked(ranked: &mut [RankedSampler]) {
    ranked.sort_by(|a, b| {
        b.tau_hat
            .total_cmp(&a.tau_hat)
            .then_with(|| a.sampler.cmp(&b.sampler))
    });
}
