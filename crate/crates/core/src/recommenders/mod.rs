//! Algorithm roster, training and full-ranking evaluation.

mod metrics;
mod model;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Scenario;
use crate::error::{Error, Result};

pub use metrics::{evaluate, evaluate_with, EvalTarget};
pub use model::{example_gradient, example_loss, Example, Gradient, Mlp, ModelParams, Scorer};
pub use train::{
    train, tune, EpochTrainer, EvalReport, HyperGrid, TrainConfig, TrainOutcome, TrainingData,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "pop_rec")]
    PopRec,
    #[serde(rename = "bias_only")]
    BiasOnly,
    #[serde(rename = "mf")]
    MF,
    #[serde(rename = "neumf_lite")]
    NeuMFLite,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::PopRec,
        Algorithm::BiasOnly,
        Algorithm::MF,
        Algorithm::NeuMFLite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::PopRec => "pop_rec",
            Algorithm::BiasOnly => "bias_only",
            Algorithm::MF => "mf",
            Algorithm::NeuMFLite => "neumf_lite",
        }
    }

    pub fn has_factors(self) -> bool {
        matches!(self, Algorithm::MF | Algorithm::NeuMFLite)
    }

    pub fn is_pertinent(self, scenario: Scenario) -> bool {
        !(self == Algorithm::PopRec && scenario == Scenario::Explicit)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "auc")]
    Auc,
    #[serde(rename = "recall@100")]
    Recall100,
    #[serde(rename = "ndcg@10")]
    Ndcg10,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mse, Metric::Auc, Metric::Recall100, Metric::Ndcg10];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Auc => "auc",
            Metric::Recall100 => "recall@100",
            Metric::Ndcg10 => "ndcg@10",
        }
    }

    pub fn lower_is_better(self) -> bool {
        self == Metric::Mse
    }

    /// Position in the meta-learner's one-hot encoding.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_pertinent(self, scenario: Scenario) -> bool {
        (self == Metric::Mse) == (scenario == Scenario::Explicit)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Metric::Mse),
            "auc" => Ok(Metric::Auc),
            "recall" | "recall@100" => Ok(Metric::Recall100),
            "ndcg" | "ndcg@10" => Ok(Metric::Ndcg10),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

pub fn pertinent_algorithms(scenario: Scenario) -> Vec<Algorithm> {
    Algorithm::ALL
        .into_iter()
        .filter(|a| a.is_pertinent(scenario))
        .collect()
}

pub fn pertinent_metrics(scenario: Scenario) -> Vec<Metric> {
    Metric::ALL
        .into_iter()
        .filter(|m| m.is_pertinent(scenario))
        .collect()
}

/// Metric driving early stopping and model selection.
pub fn headline_metric(scenario: Scenario) -> Metric {
    match scenario {
        Scenario::Explicit => Metric::Mse,
        Scenario::Implicit | Scenario::Sequential => Metric::Ndcg10,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pertinence_table() {
        assert_eq!(pertinent_algorithms(Scenario::Explicit).len(), 3);
        assert_eq!(pertinent_algorithms(Scenario::Implicit).len(), 4);
        assert_eq!(pertinent_metrics(Scenario::Explicit), vec![Metric::Mse]);
        assert_eq!(
            pertinent_metrics(Scenario::Sequential),
            vec![Metric::Auc, Metric::Recall100, Metric::Ndcg10]
        );
    }

    #[test]
    fn names_parse() {
        assert_eq!("ndcg".parse::<Metric>().unwrap(), Metric::Ndcg10);
        assert_eq!(
            "neumf_lite".parse::<Algorithm>().unwrap(),
            Algorithm::NeuMFLite
        );
        assert_eq!(
            serde_json::to_string(&Metric::Recall100).unwrap(),
            "\"recall@100\""
        );
    }
}
