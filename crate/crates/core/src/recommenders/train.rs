use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalTarget};
use super::model::{example_gradient, Example, Gradient, ModelParams};
use super::{headline_metric, pertinent_metrics, Algorithm, Metric};
use crate::dataset::{Dataset, Scenario, SplitDataset};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 16,
            learning_rate: 0.02,
            dropout: 0.0,
            l2: 1e-4,
            max_epochs: 50,
            patience: 5,
        }
    }
}

/// Hyperparameter search space. Bias-only only varies the learning rate,
/// MF the latent size and learning rate, NeuMF-lite all three.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub dims: Vec<usize>,
    pub dropouts: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub l2: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            dims: vec![4, 8, 16, 32, 50],
            dropouts: vec![0.0, 0.3, 0.5],
            learning_rates: vec![0.001, 0.006, 0.02],
            l2: 1e-4,
            max_epochs: 50,
            patience: 5,
        }
    }
}

impl HyperGrid {
    pub fn single(config: TrainConfig) -> Self {
        HyperGrid {
            dims: vec![config.dim],
            dropouts: vec![config.dropout],
            learning_rates: vec![config.learning_rate],
            l2: config.l2,
            max_epochs: config.max_epochs,
            patience: config.patience,
        }
    }

    pub fn configs(&self, algorithm: Algorithm) -> Vec<TrainConfig> {
        let base = TrainConfig {
            l2: self.l2,
            max_epochs: self.max_epochs,
            patience: self.patience,
            ..TrainConfig::default()
        };
        let first_dim = self.dims.first().copied().unwrap_or(base.dim);
        let dims: &[usize] = if algorithm.has_factors() {
            &self.dims
        } else {
            std::slice::from_ref(&first_dim)
        };
        let no_dropout = [0.0];
        let dropouts: &[f64] = if algorithm == Algorithm::NeuMFLite {
            &self.dropouts
        } else {
            &no_dropout
        };
        let lrs: &[f64] = if algorithm == Algorithm::PopRec {
            &self.learning_rates[..1]
        } else {
            &self.learning_rates
        };
        let mut out = Vec::new();
        for &dim in dims {
            for &dropout in dropouts {
                for &learning_rate in lrs {
                    out.push(TrainConfig {
                        dim,
                        dropout,
                        learning_rate,
                        ..base
                    });
                }
            }
        }
        out
    }
}

/// The split supplies validation/test and the evaluation exclusions; `fit`
/// is the interaction set the model is trained on (the train split itself
/// or a sample of it).
#[derive(Clone, Copy)]
pub struct TrainingData<'a> {
    pub split: &'a SplitDataset,
    pub fit: &'a Dataset,
}

impl<'a> TrainingData<'a> {
    pub fn full(split: &'a SplitDataset) -> Self {
        TrainingData {
            split,
            fit: &split.train,
        }
    }

    pub fn sampled(split: &'a SplitDataset, fit: &'a Dataset) -> Self {
        TrainingData { split, fit }
    }
}

/// SGD over one interaction set, one epoch at a time. Explicit feedback
/// minimizes squared error; implicit and sequential feedback minimize BPR
/// with one uniformly drawn negative per positive, redrawn every epoch.
pub struct EpochTrainer<'a, T> {
    scenario: Scenario,
    fit: &'a Dataset,
    params: ModelParams<T>,
    config: TrainConfig,
    rng: Rng,
    positives: Vec<Vec<u32>>,
    order: Vec<usize>,
    grad: Gradient<T>,
    mask: Vec<T>,
    epoch: usize,
}

impl<'a, T: Scalar> EpochTrainer<'a, T> {
    pub fn new(
        algorithm: Algorithm,
        scenario: Scenario,
        fit: &'a Dataset,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        if algorithm == Algorithm::PopRec {
            return Err(Error::InvalidSpec {
                family: algorithm.to_string(),
                reason: "popularity ranking has no gradient training".into(),
            });
        }
        let mut rng = rng::rng(seed, &format!("train/{algorithm}"));
        let mut params = ModelParams::init(
            algorithm,
            fit.num_users(),
            fit.num_items(),
            config.dim,
            &mut rng,
        );
        if scenario == Scenario::Explicit && !fit.is_empty() {
            let mean =
                fit.interactions().iter().map(|it| it.rating).sum::<f64>() / fit.len() as f64;
            params.alpha = T::of(mean);
        }
        let positives = (0..fit.num_users()).map(|u| fit.user_items(u)).collect();
        let grad = Gradient::for_params(&params);
        let hidden = params.mlp.as_ref().map_or(0, |m| m.hidden);
        Ok(EpochTrainer {
            scenario,
            fit,
            params,
            config,
            rng,
            positives,
            order: (0..fit.len()).collect(),
            grad,
            mask: vec![T::one(); hidden],
            epoch: 0,
        })
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    fn draw_negative(&mut self, user: usize) -> Option<usize> {
        let known = &self.positives[user];
        let n = self.fit.num_items();
        if known.len() >= n {
            return None;
        }
        loop {
            let j = self.rng.random_range(0..n);
            if known.binary_search(&(j as u32)).is_err() {
                return Some(j);
            }
        }
    }

    /// One pass over the interactions in a fresh random order. Returns the
    /// mean per-example loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.epoch += 1;
        let lr = T::of(self.config.learning_rate);
        let l2 = T::of(self.config.l2);
        let dropout = self.config.dropout;
        let mut order = std::mem::take(&mut self.order);
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for &k in &order {
            let it = self.fit.interactions()[k];
            let user = it.user as usize;
            let example = match self.scenario {
                Scenario::Explicit => Example::Rating {
                    user,
                    item: it.item as usize,
                    rating: it.rating,
                },
                Scenario::Implicit | Scenario::Sequential => match self.draw_negative(user) {
                    Some(negative) => Example::Pair {
                        user,
                        positive: it.item as usize,
                        negative,
                    },
                    None => continue,
                },
            };
            let mask = if dropout > 0.0 && !self.mask.is_empty() {
                let keep = T::of(1.0 / (1.0 - dropout));
                for m in self.mask.iter_mut() {
                    *m = if self.rng.random::<f64>() < dropout {
                        T::zero()
                    } else {
                        keep
                    };
                }
                Some(self.mask.as_slice())
            } else {
                None
            };
            let loss = example_gradient(&self.params, &example, l2, mask, &mut self.grad);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch: self.epoch });
            }
            self.grad.apply(&mut self.params, lr);
            total += loss.as_f64();
            count += 1;
        }
        self.order = order;
        if !self.params.is_finite() {
            return Err(Error::Divergence { epoch: self.epoch });
        }
        Ok(if count == 0 {
            0.0
        } else {
            total / count as f64
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub epochs_trained: usize,
    /// Headline validation metric after each epoch.
    pub validation: Vec<f64>,
}

fn popularity<T: Scalar>(fit: &Dataset) -> ModelParams<T> {
    let mut p = ModelParams::zeros(Algorithm::PopRec, fit.num_users(), fit.num_items(), 0);
    for (i, b) in p.item_bias.iter_mut().enumerate() {
        *b = T::of_usize(fit.item_degree(i));
    }
    p
}

/// Trains with early stopping on the scenario's headline validation metric
/// and returns the best-validation checkpoint.
pub fn train<T: Scalar>(
    algorithm: Algorithm,
    data: TrainingData<'_>,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    let scenario = data.split.scenario;
    if !algorithm.is_pertinent(scenario) {
        return Err(Error::NotPertinent {
            algorithm: algorithm.to_string(),
            scenario: scenario.to_string(),
        });
    }
    if algorithm == Algorithm::PopRec {
        return Ok(TrainOutcome {
            params: popularity(data.fit),
            config: *config,
            best_epoch: 0,
            epochs_trained: 0,
            validation: Vec::new(),
        });
    }
    let headline = headline_metric(scenario);
    let mut trainer = EpochTrainer::new(algorithm, scenario, data.fit, *config, seed)?;
    let mut best: Option<(f64, ModelParams<T>, usize)> = None;
    let mut history = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        trainer.run_epoch()?;
        let v = evaluate(
            trainer.params(),
            data.split,
            EvalTarget::Validation,
            &[headline],
        )?[&headline];
        if !v.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(v);
        let better = match &best {
            None => true,
            Some((b, _, _)) => {
                if headline.lower_is_better() {
                    v < *b
                } else {
                    v > *b
                }
            }
        };
        if better {
            best = Some((v, trainer.params().clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let epochs_trained = trainer.epochs_run();
    let (_, params, best_epoch) = match best {
        Some(b) => b,
        None => (f64::NAN, trainer.into_params(), 0),
    };
    Ok(TrainOutcome {
        params,
        config: *config,
        best_epoch,
        epochs_trained,
        validation: history,
    })
}

/// Test-set metrics of one tuned model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: Algorithm,
    pub scenario: Scenario,
    pub metrics: BTreeMap<Metric, f64>,
    pub epochs_trained: usize,
    pub seed: u64,
    pub config: TrainConfig,
}

/// Grid search on validation; the winner is evaluated on test with every
/// scenario-pertinent metric. Diverging configurations are skipped.
pub fn tune<T: Scalar>(
    algorithm: Algorithm,
    data: TrainingData<'_>,
    grid: &HyperGrid,
    seed: u64,
) -> Result<(TrainOutcome<T>, EvalReport)> {
    let scenario = data.split.scenario;
    let headline = headline_metric(scenario);
    let mut best: Option<(f64, TrainOutcome<T>)> = None;
    let mut last_err = None;
    for config in grid.configs(algorithm) {
        match train::<T>(algorithm, data, &config, seed) {
            Ok(outcome) => {
                let v = if algorithm == Algorithm::PopRec {
                    0.0
                } else {
                    outcome.validation[outcome.best_epoch - 1]
                };
                let better = match &best {
                    None => true,
                    Some((b, _)) => {
                        if headline.lower_is_better() {
                            v < *b
                        } else {
                            v > *b
                        }
                    }
                };
                if better {
                    best = Some((v, outcome));
                }
            }
            Err(e @ Error::Divergence { .. }) => {
                log::warn!("{algorithm} diverged with {config:?}: {e}");
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    let (_, outcome) = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap_or(Error::Config("empty hyperparameter grid".into()))),
    };
    let metrics = evaluate(
        &outcome.params,
        data.split,
        EvalTarget::Test,
        &pertinent_metrics(scenario),
    )?;
    let report = EvalReport {
        algorithm,
        scenario,
        metrics,
        epochs_trained: outcome.epochs_trained,
        seed,
        config: outcome.config,
    };
    Ok((outcome, report))
}
