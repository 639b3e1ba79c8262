//! Proxy-based sampling: train a cheap model, score every interaction (or
//! user) by how hard the proxy found it, and keep the hardest ones.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Scenario};
use crate::error::{Error, Result};
use crate::recommenders::{Algorithm, EpochTrainer, ModelParams, TrainConfig};
use crate::rng;
use crate::samplers::{
    checked_target, keep_users_in_order, sampler_rng, ProxyKind, SampleAxis, SampleResult,
    SamplerFamily, SamplerSpec,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub dim: usize,
    pub l2: f64,
    pub negatives_per_positive: usize,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            epochs: 20,
            learning_rate: 0.006,
            dim: 16,
            l2: 1e-4,
            negatives_per_positive: 50,
        }
    }
}

/// Per-epoch snapshots of a proxy trained without early stopping.
#[derive(Clone, Debug)]
pub struct ProxyTrace<T> {
    pub proxy: ProxyKind,
    pub scenario: Scenario,
    pub snapshots: Vec<ModelParams<T>>,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl<T> ProxyTrace<T> {
    pub fn epochs(&self) -> usize {
        self.snapshots.len()
    }
}

pub fn proxy_algorithm(proxy: ProxyKind) -> Algorithm {
    match proxy {
        ProxyKind::BiasOnly => Algorithm::BiasOnly,
        ProxyKind::MF => Algorithm::MF,
    }
}

pub fn train_proxy<T: Scalar>(
    train: &Dataset,
    scenario: Scenario,
    proxy: ProxyKind,
    config: &ProxyConfig,
    seed: u64,
) -> Result<ProxyTrace<T>> {
    if config.epochs == 0 {
        return Err(Error::Config("proxy needs at least one epoch".into()));
    }
    let train_config = TrainConfig {
        dim: config.dim,
        learning_rate: config.learning_rate,
        dropout: 0.0,
        l2: config.l2,
        max_epochs: config.epochs,
        patience: config.epochs,
    };
    let mut trainer =
        EpochTrainer::<T>::new(proxy_algorithm(proxy), scenario, train, train_config, seed)?;
    let mut snapshots = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
        snapshots.push(trainer.params().clone());
    }
    Ok(ProxyTrace {
        proxy,
        scenario,
        snapshots,
        negatives_per_positive: config.negatives_per_positive,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub axis: SampleAxis,
    /// Indexed by train interaction index or by user id.
    pub scores: Vec<f64>,
    /// `p_{u,i}` (interaction axis) or `p_u` (user axis) when corrected.
    pub propensities: Option<Vec<f64>>,
    /// Users whose score is undefined because they have no negatives.
    pub excluded_users: Vec<u32>,
}

impl ImportanceTable {
    pub fn propensity_corrected(&self) -> bool {
        self.propensities.is_some()
    }

    /// CSV with columns `index,importance,propensity`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "index,importance,propensity").map_err(io)?;
        for (k, s) in self.scores.iter().enumerate() {
            let p = self.propensities.as_ref().map_or(1.0, |p| p[k]);
            writeln!(w, "{k},{s},{p}").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Per-interaction Δ: mean squared error over epochs for explicit feedback,
/// mean clamped inverse sampled-AUC for implicit and sequential feedback.
/// Users without negatives score 0 and are listed as excluded.
pub fn interaction_deltas<T: Scalar>(
    trace: &ProxyTrace<T>,
    train: &Dataset,
) -> (Vec<f64>, Vec<u32>) {
    let explicit = trace.scenario == Scenario::Explicit;
    let npp = trace.negatives_per_positive.max(1);
    let eps = 1.0 / (2.0 * npp as f64);
    let epochs = trace.epochs() as f64;
    let num_items = train.num_items();
    let per_user: Vec<(Vec<(usize, f64)>, bool)> = (0..train.num_users())
        .into_par_iter()
        .map(|u| {
            let history = train.user_history(u);
            if history.is_empty() {
                return (Vec::new(), false);
            }
            if explicit {
                let out = history
                    .iter()
                    .map(|&k| {
                        let it = train.interactions()[k as usize];
                        let sum: f64 = trace
                            .snapshots
                            .iter()
                            .map(|p| (p.predict(u, it.item as usize).as_f64() - it.rating).powi(2))
                            .sum();
                        (k as usize, sum / epochs)
                    })
                    .collect();
                return (out, false);
            }
            let known = train.user_items(u);
            if known.len() >= num_items {
                return (history.iter().map(|&k| (k as usize, 0.0)).collect(), true);
            }
            let mut negs = vec![0usize; npp];
            let out = history
                .iter()
                .map(|&k| {
                    let item = train.interactions()[k as usize].item as usize;
                    // seeded by the pair itself, so the value does not depend on visit order
                    let mut r = rng::rng_indexed(
                        trace.seed,
                        "svp/negatives",
                        (u * num_items + item) as u64,
                    );
                    let mut sum = 0.0;
                    for p in &trace.snapshots {
                        for n in negs.iter_mut() {
                            *n = loop {
                                let j = r.random_range(0..num_items);
                                if known.binary_search(&(j as u32)).is_err() {
                                    break j;
                                }
                            };
                        }
                        let pos = p.predict(u, item);
                        let wins = negs.iter().filter(|&&j| pos > p.predict(u, j)).count();
                        let auc = wins as f64 / npp as f64;
                        sum += 1.0 / auc.max(eps);
                    }
                    (k as usize, sum / epochs)
                })
                .collect();
            (out, false)
        })
        .collect();
    let mut deltas = vec![0.0; train.len()];
    let mut excluded = Vec::new();
    for (u, (rows, ex)) in per_user.into_iter().enumerate() {
        if ex {
            log::warn!("user {u} has no negatives; importance undefined, excluded");
            excluded.push(u as u32);
        }
        for (k, d) in rows {
            deltas[k] = d;
        }
    }
    (deltas, excluded)
}

/// Builds the importance table for one axis. With `propensity` the
/// per-interaction score is Δ/p_{u,i}; the user score averages over the
/// user's positives either way.
pub fn importance<T: Scalar>(
    trace: &ProxyTrace<T>,
    train: &Dataset,
    axis: SampleAxis,
    propensity: Option<&PropensityParams>,
) -> ImportanceTable {
    let (deltas, excluded_users) = interaction_deltas(trace, train);
    importance_from_deltas(train, &deltas, excluded_users, axis, propensity)
}

pub fn importance_from_deltas(
    train: &Dataset,
    deltas: &[f64],
    excluded_users: Vec<u32>,
    axis: SampleAxis,
    propensity: Option<&PropensityParams>,
) -> ImportanceTable {
    let per_interaction: Vec<f64> = match propensity {
        Some(p) => train
            .interactions()
            .iter()
            .zip(deltas)
            .map(|(it, &d)| corrected_importance(d, p.pair(it.user as usize, it.item as usize)))
            .collect(),
        None => deltas.to_vec(),
    };
    match axis {
        SampleAxis::Interactions => ImportanceTable {
            axis,
            propensities: propensity.map(|p| {
                train
                    .interactions()
                    .iter()
                    .map(|it| p.pair(it.user as usize, it.item as usize))
                    .collect()
            }),
            scores: per_interaction,
            excluded_users,
        },
        SampleAxis::Users => {
            let scores = (0..train.num_users())
                .map(|u| {
                    let h = train.user_history(u);
                    if h.is_empty() {
                        0.0
                    } else {
                        h.iter().map(|&k| per_interaction[k as usize]).sum::<f64>() / h.len() as f64
                    }
                })
                .collect();
            ImportanceTable {
                axis,
                propensities: propensity
                    .map(|p| (0..train.num_users()).map(|u| p.user(u)).collect()),
                scores,
                excluded_users,
            }
        }
    }
}

/// `Δ / p`, the inverse-propensity estimate of Δ from an observed point.
pub fn corrected_importance(delta: f64, propensity: f64) -> f64 {
    delta / propensity
}

/// Sigmoid propensity model over interaction counts:
/// `p = 1 / (1 + C exp(-A ln(N + B)))` with `C = (ln n - 1)(B + 1)^A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityParams {
    pub a: f64,
    pub b: f64,
    pub c_user: f64,
    pub c_item: f64,
    pub user_counts: Vec<usize>,
    pub item_counts: Vec<usize>,
}

pub const PROPENSITY_A: f64 = 0.55;
pub const PROPENSITY_B: f64 = 1.5;

pub fn propensity_constant(population: usize, a: f64, b: f64) -> Result<f64> {
    let ln = (population as f64).ln();
    if ln <= 1.0 {
        return Err(Error::PropensityInvalid { count: population });
    }
    Ok((ln - 1.0) * (b + 1.0).powf(a))
}

pub fn propensity_value(count: usize, c: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + c * (-a * (count as f64 + b).ln()).exp())
}

pub fn propensity(train: &Dataset, a: f64, b: f64) -> Result<PropensityParams> {
    Ok(PropensityParams {
        a,
        b,
        c_user: propensity_constant(train.num_active_users(), a, b)?,
        c_item: propensity_constant(train.num_active_items(), a, b)?,
        user_counts: (0..train.num_users())
            .map(|u| train.user_degree(u))
            .collect(),
        item_counts: (0..train.num_items())
            .map(|i| train.item_degree(i))
            .collect(),
    })
}

impl PropensityParams {
    pub fn user(&self, u: usize) -> f64 {
        propensity_value(self.user_counts[u], self.c_user, self.a, self.b)
    }

    pub fn item(&self, i: usize) -> f64 {
        propensity_value(self.item_counts[i], self.c_item, self.a, self.b)
    }

    pub fn pair(&self, u: usize, i: usize) -> f64 {
        self.user(u) * self.item(i)
    }
}

/// Keeps the highest-importance interactions (or whole users) until the
/// count contract is met. Ties are broken by a seeded shuffle.
pub fn sample_by_importance(
    train: &Dataset,
    table: &ImportanceTable,
    spec: &SamplerSpec,
) -> Result<SampleResult> {
    let target = checked_target(train, spec)?;
    let mut rng = sampler_rng(spec);
    match table.axis {
        SampleAxis::Interactions => {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng);
            order.sort_by(|&a, &b| table.scores[b].total_cmp(&table.scores[a]));
            order.truncate(target);
            Ok(SampleResult::build(train, spec, target, order))
        }
        SampleAxis::Users => {
            let mut users = train.active_users();
            users.shuffle(&mut rng);
            users.sort_by(|&a, &b| table.scores[b as usize].total_cmp(&table.scores[a as usize]));
            Ok(keep_users_in_order(train, spec, target, &users))
        }
    }
}

/// Trains the proxy named by `spec`, scores the train set and samples.
pub fn svp_sample<T: Scalar>(
    train: &Dataset,
    scenario: Scenario,
    spec: &SamplerSpec,
    config: &ProxyConfig,
) -> Result<SampleResult> {
    let (proxy, axis) = match (spec.family.is_svp(), spec.proxy, spec.axis) {
        (true, Some(p), Some(a)) => (p, a),
        _ => {
            return Err(Error::InvalidSpec {
                family: spec.name(),
                reason: "not a proxy-based sampler".into(),
            })
        }
    };
    checked_target(train, spec)?;
    let trace = train_proxy::<T>(train, scenario, proxy, config, spec.seed)?;
    let prop = if spec.family == SamplerFamily::SvpCfProp {
        Some(propensity(train, PROPENSITY_A, PROPENSITY_B)?)
    } else {
        None
    };
    let table = importance(&trace, train, axis, prop.as_ref());
    sample_by_importance(train, &table, spec)
}

/// Runs any of the sixteen strategies; proxy-based ones train their proxy
/// on `train` first.
pub fn draw_any<T: Scalar>(
    train: &Dataset,
    scenario: Scenario,
    spec: &SamplerSpec,
    config: &ProxyConfig,
) -> Result<SampleResult> {
    if spec.family.is_svp() {
        svp_sample::<T>(train, scenario, spec, config)
    } else {
        crate::samplers::draw(train, spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{IdMap, Interaction};
    use std::sync::Arc;

    fn ds(rows: &[(u32, u32, f64)], nu: usize, ni: usize) -> Dataset {
        let its = rows
            .iter()
            .enumerate()
            .map(|(k, &(user, item, rating))| Interaction {
                user,
                item,
                rating,
                timestamp: k as i64,
            })
            .collect();
        Dataset::new("t", its, nu, ni, Arc::new(IdMap::default())).unwrap()
    }

    fn random_ds(nu: usize, ni: usize, per_user: usize, seed: u64) -> Dataset {
        let mut r = rng::rng(seed, "svp-test");
        let mut rows = Vec::new();
        for u in 0..nu as u32 {
            let items = rand::seq::index::sample(&mut r, ni, per_user);
            for i in items {
                rows.push((u, i as u32, r.random_range(1..=5) as f64));
            }
        }
        ds(&rows, nu, ni)
    }

    /// A trace whose single snapshot is the given parameters.
    fn fixed_trace(params: ModelParams<f64>, scenario: Scenario, npp: usize) -> ProxyTrace<f64> {
        ProxyTrace {
            proxy: ProxyKind::BiasOnly,
            scenario,
            snapshots: vec![params],
            negatives_per_positive: npp,
            seed: 0,
        }
    }

    #[test]
    fn explicit_importance_is_mean_epoch_error() {
        let train = ds(&[(0, 0, 3.0)], 1, 1);
        let mut p0 = ModelParams::zeros(Algorithm::BiasOnly, 1, 1, 0);
        p0.alpha = 2.0;
        let mut p1 = p0.clone();
        p1.alpha = 3.0;
        let trace = ProxyTrace {
            snapshots: vec![p0, p1],
            ..fixed_trace(
                ModelParams::zeros(Algorithm::BiasOnly, 1, 1, 0),
                Scenario::Explicit,
                1,
            )
        };
        let t = importance(&trace, &train, SampleAxis::Interactions, None);
        assert_eq!(t.scores, vec![0.5]);
    }

    #[test]
    fn single_epoch_trace_is_single_epoch_error() {
        let train = ds(&[(0, 0, 5.0), (0, 1, 1.0)], 1, 2);
        let mut p = ModelParams::zeros(Algorithm::BiasOnly, 1, 2, 0);
        p.alpha = 3.0;
        let t = importance(
            &fixed_trace(p, Scenario::Explicit, 1),
            &train,
            SampleAxis::Interactions,
            None,
        );
        assert_eq!(t.scores, vec![4.0, 4.0]);
        let tu = importance(
            &fixed_trace(t_params(), Scenario::Explicit, 1),
            &train,
            SampleAxis::Users,
            None,
        );
        assert_eq!(tu.scores.len(), 1);
    }

    fn t_params() -> ModelParams<f64> {
        ModelParams::zeros(Algorithm::BiasOnly, 1, 2, 0)
    }

    #[test]
    fn implicit_importance_bounds() {
        // user 0 likes item 0; items 1..20 are negatives
        let train = ds(&[(0, 0, 1.0)], 1, 20);
        let mut good = ModelParams::zeros(Algorithm::BiasOnly, 1, 20, 0);
        good.item_bias[0] = 1.0;
        let t = importance(
            &fixed_trace(good, Scenario::Implicit, 50),
            &train,
            SampleAxis::Interactions,
            None,
        );
        assert_eq!(t.scores, vec![1.0]);
        let mut bad = ModelParams::zeros(Algorithm::BiasOnly, 1, 20, 0);
        bad.item_bias[0] = -1.0;
        let t = importance(
            &fixed_trace(bad, Scenario::Implicit, 50),
            &train,
            SampleAxis::Interactions,
            None,
        );
        assert_eq!(t.scores, vec![100.0]);
    }

    #[test]
    fn user_without_negatives_is_excluded() {
        let train = ds(&[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0)], 2, 2);
        let p = ModelParams::zeros(Algorithm::BiasOnly, 2, 2, 0);
        let t = importance(
            &fixed_trace(p, Scenario::Implicit, 5),
            &train,
            SampleAxis::Users,
            None,
        );
        assert_eq!(t.excluded_users, vec![0]);
        assert_eq!(t.scores[0], 0.0);
        assert!(t.scores[1] > 0.0);
    }

    #[test]
    fn constant_ratings_give_equal_importance() {
        let rows: Vec<_> = (0..6u32)
            .flat_map(|u| (0..5u32).map(move |i| (u, (u + i) % 8, 4.0)))
            .collect();
        let train = ds(&rows, 6, 8);
        let trace = train_proxy::<f64>(
            &train,
            Scenario::Explicit,
            ProxyKind::BiasOnly,
            &ProxyConfig::default(),
            1,
        )
        .unwrap();
        assert_eq!(trace.epochs(), 20);
        let t = importance(&trace, &train, SampleAxis::Interactions, None);
        assert!(t.scores.iter().all(|&s| (s - t.scores[0]).abs() < 1e-12));
    }

    #[test]
    fn propensity_closed_form() {
        // independent scripted evaluation of the closed form
        let c = propensity_constant(1000, 0.55, 1.5).unwrap();
        let p = propensity_value(10, c, 0.55, 1.5);
        assert!((p - 0.28151987893010255).abs() < 1e-12, "{p}");
        let big = propensity_value(1 << 40, c, 0.55, 1.5);
        assert!(big > 0.999);
        assert!(matches!(
            propensity_constant(2, 0.55, 1.5),
            Err(Error::PropensityInvalid { count: 2 })
        ));
    }

    #[test]
    fn equal_counts_equal_propensity() {
        let train = random_ds(10, 30, 5, 1);
        let p = propensity(&train, PROPENSITY_A, PROPENSITY_B).unwrap();
        assert_eq!(p.user(0), p.user(7));
        assert!((0..10).all(|u| p.user(u) > 0.0 && p.user(u) <= 1.0));
    }

    #[test]
    fn sort_property_on_interaction_axis() {
        let train = random_ds(15, 40, 6, 2);
        let scores: Vec<f64> = (0..train.len()).map(|k| ((k * 37) % 101) as f64).collect();
        let table = ImportanceTable {
            axis: SampleAxis::Interactions,
            scores: scores.clone(),
            propensities: None,
            excluded_users: vec![],
        };
        let spec = SamplerSpec::svp(
            SamplerFamily::SvpCf,
            ProxyKind::MF,
            SampleAxis::Interactions,
            30.0,
            3,
        );
        let r = sample_by_importance(&train, &table, &spec).unwrap();
        let kept_min = r
            .provenance
            .iter()
            .map(|&k| scores[k])
            .fold(f64::INFINITY, f64::min);
        let dropped_max = (0..train.len())
            .filter(|k| r.provenance.binary_search(k).is_err())
            .map(|k| scores[k])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(kept_min >= dropped_max);
        assert_eq!(r.actual_count, target_count_of(&train, 30.0));
    }

    fn target_count_of(train: &Dataset, p: f64) -> usize {
        crate::samplers::target_count(p, train.len())
    }

    #[test]
    fn equal_importance_reduces_to_seeded_random() {
        let train = random_ds(15, 40, 6, 3);
        let table = ImportanceTable {
            axis: SampleAxis::Interactions,
            scores: vec![1.0; train.len()],
            propensities: None,
            excluded_users: vec![],
        };
        let spec = SamplerSpec::svp(
            SamplerFamily::SvpCf,
            ProxyKind::MF,
            SampleAxis::Interactions,
            50.0,
            3,
        );
        let a = sample_by_importance(&train, &table, &spec).unwrap();
        let b = sample_by_importance(&train, &table, &spec).unwrap();
        assert_eq!(a.provenance, b.provenance);
        let other = SamplerSpec { seed: 4, ..spec };
        let c = sample_by_importance(&train, &table, &other).unwrap();
        assert_ne!(a.provenance, c.provenance);
    }

    #[test]
    fn unit_propensity_keeps_order() {
        let train = random_ds(12, 30, 5, 4);
        let deltas: Vec<f64> = (0..train.len()).map(|k| ((k * 13) % 17) as f64).collect();
        let mut unit = propensity(&train, PROPENSITY_A, PROPENSITY_B).unwrap();
        unit.c_user = 0.0;
        unit.c_item = 0.0;
        let plain = importance_from_deltas(&train, &deltas, vec![], SampleAxis::Interactions, None);
        let prop = importance_from_deltas(
            &train,
            &deltas,
            vec![],
            SampleAxis::Interactions,
            Some(&unit),
        );
        assert_eq!(plain.scores, prop.scores);
    }

    #[test]
    fn full_percent_returns_train() {
        let train = random_ds(10, 25, 4, 5);
        for name in ["svp_cf_mf_interactions", "svp_cf_prop_bias_only_users"] {
            let spec = SamplerSpec::parse(name, 100.0, 1).unwrap();
            let cfg = ProxyConfig {
                epochs: 2,
                negatives_per_positive: 5,
                ..ProxyConfig::default()
            };
            let r = svp_sample::<f64>(&train, Scenario::Implicit, &spec, &cfg).unwrap();
            assert_eq!(r.provenance, (0..train.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn importance_ignores_interaction_order() {
        let train = random_ds(8, 20, 5, 6);
        let mut rev: Vec<_> = train.interactions().to_vec();
        rev.reverse();
        let shuffled = Dataset::new("r", rev, 8, 20, Arc::new(IdMap::default())).unwrap();
        let trace = ProxyTrace {
            snapshots: vec![ModelParams::init(
                Algorithm::MF,
                8,
                20,
                4,
                &mut rng::rng(1, "p"),
            )],
            ..fixed_trace(t_params(), Scenario::Implicit, 10)
        };
        let a = importance(&trace, &train, SampleAxis::Interactions, None);
        let b = importance(&trace, &shuffled, SampleAxis::Interactions, None);
        let n = train.len();
        for k in 0..n {
            // reversed order maps index k to n-1-k
            assert_eq!(a.scores[k], b.scores[n - 1 - k]);
        }
    }
}
