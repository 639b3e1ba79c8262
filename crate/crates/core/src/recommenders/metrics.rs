//! Full-ranking evaluation: every item is a candidate except the user's
//! already-known positives.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::model::{ModelParams, Scorer};
use super::Metric;
use crate::dataset::{Dataset, SplitDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalTarget {
    Validation,
    Test,
}

/// Anything that can score (user, item) pairs.
pub trait ScoreSource: Sync {
    fn score_all(&self, user: usize, out: &mut [f64]);
    fn score(&self, user: usize, item: usize) -> f64;
}

impl<T: Scalar> ScoreSource for Scorer<'_, T> {
    fn score_all(&self, user: usize, out: &mut [f64]) {
        let mut buf = vec![T::zero(); out.len()];
        self.score_user(user, &mut buf);
        for (o, b) in out.iter_mut().zip(buf) {
            *o = b.as_f64();
        }
    }

    fn score(&self, user: usize, item: usize) -> f64 {
        self.params().predict(user, item).as_f64()
    }
}

impl<F> ScoreSource for F
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    fn score_all(&self, user: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self(user, i);
        }
    }

    fn score(&self, user: usize, item: usize) -> f64 {
        self(user, item)
    }
}

pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    split: &SplitDataset,
    target: EvalTarget,
    metrics: &[Metric],
) -> Result<BTreeMap<Metric, f64>> {
    evaluate_with(&Scorer::new(params), split, target, metrics)
}

#[derive(Default, Clone, Copy)]
struct Partial {
    users: usize,
    recall: f64,
    ndcg: f64,
    auc_sum: f64,
    auc_count: usize,
    sq_err: f64,
    ratings: usize,
}

fn items_of(ds: &Dataset, user: usize, into: &mut Vec<u32>) {
    into.extend(
        ds.user_history(user)
            .iter()
            .map(|&k| ds.interactions()[k as usize].item),
    );
}

/// Evaluates `metrics` for every user with a non-empty held-out set.
///
/// Recall@100 uses `min(100, |relevant|)` as denominator; AUC counts score
/// ties as one half and averages over all held-out positives; a held-out
/// item that also appears among the known items stays a candidate.
pub fn evaluate_with<S: ScoreSource + ?Sized>(
    scores: &S,
    split: &SplitDataset,
    target: EvalTarget,
    metrics: &[Metric],
) -> Result<BTreeMap<Metric, f64>> {
    let held = match target {
        EvalTarget::Validation => &split.validation,
        EvalTarget::Test => &split.test,
    };
    let num_items = split.train.num_items();
    let need_ranking = metrics.iter().any(|m| !matches!(m, Metric::Mse));

    let partials: Vec<Partial> = (0..held.num_users())
        .into_par_iter()
        .map(|u| {
            let mut part = Partial::default();
            if held.user_degree(u) == 0 {
                return part;
            }
            part.users = 1;
            if metrics.contains(&Metric::Mse) {
                for &k in held.user_history(u) {
                    let it = held.interactions()[k as usize];
                    let e = scores.score(u, it.item as usize) - it.rating;
                    part.sq_err += e * e;
                    part.ratings += 1;
                }
            }
            if !need_ranking {
                return part;
            }
            let mut relevant = Vec::new();
            items_of(held, u, &mut relevant);
            relevant.sort_unstable();
            relevant.dedup();

            let mut known = Vec::new();
            items_of(&split.train, u, &mut known);
            if target == EvalTarget::Test {
                items_of(&split.validation, u, &mut known);
            }
            let mut excluded = vec![false; num_items];
            for &i in &known {
                excluded[i as usize] = true;
            }
            for &i in &relevant {
                excluded[i as usize] = false;
            }
            let mut interacted = vec![false; num_items];
            for &i in known.iter().chain(&relevant) {
                interacted[i as usize] = true;
            }
            items_of(&split.test, u, &mut known);
            items_of(&split.validation, u, &mut known);
            for &i in &known {
                interacted[i as usize] = true;
            }

            let mut s = vec![0.0; num_items];
            scores.score_all(u, &mut s);

            let mut hits = 0usize;
            let mut dcg = 0.0;
            for &r in &relevant {
                let sr = s[r as usize];
                let mut rank = 1usize;
                let mut below = 0.0;
                let mut negatives = 0usize;
                for j in 0..num_items {
                    if j == r as usize {
                        continue;
                    }
                    let sj = s[j];
                    if !excluded[j] && (sj > sr || (sj == sr && j < r as usize)) {
                        rank += 1;
                    }
                    if !interacted[j] {
                        negatives += 1;
                        if sj < sr {
                            below += 1.0;
                        } else if sj == sr {
                            below += 0.5;
                        }
                    }
                }
                if rank <= 100 {
                    hits += 1;
                }
                if rank <= 10 {
                    dcg += 1.0 / ((rank + 1) as f64).log2();
                }
                if negatives > 0 {
                    part.auc_sum += below / negatives as f64;
                    part.auc_count += 1;
                }
            }
            part.recall = hits as f64 / relevant.len().min(100) as f64;
            let idcg: f64 = (1..=relevant.len().min(10))
                .map(|r| 1.0 / ((r + 1) as f64).log2())
                .sum();
            part.ndcg = dcg / idcg;
            part
        })
        .collect();

    let total = partials.iter().fold(Partial::default(), |mut acc, p| {
        acc.users += p.users;
        acc.recall += p.recall;
        acc.ndcg += p.ndcg;
        acc.auc_sum += p.auc_sum;
        acc.auc_count += p.auc_count;
        acc.sq_err += p.sq_err;
        acc.ratings += p.ratings;
        acc
    });
    if total.users == 0 {
        return Err(Error::NothingToEvaluate);
    }
    let mut out = BTreeMap::new();
    for &m in metrics {
        let v = match m {
            Metric::Mse => total.sq_err / total.ratings as f64,
            Metric::Auc => {
                if total.auc_count == 0 {
                    return Err(Error::NothingToEvaluate);
                }
                total.auc_sum / total.auc_count as f64
            }
            Metric::Recall100 => total.recall / total.users as f64,
            Metric::Ndcg10 => total.ndcg / total.users as f64,
        };
        out.insert(m, v);
    }
    Ok(out)
}
