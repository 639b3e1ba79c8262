use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("input file {0} contains no interactions")]
    EmptyFile(PathBuf),
    #[error("dataset degenerate after preprocessing")]
    Degenerate,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("sampling percent must lie in (0, 100], got {0}")]
    InvalidPercent(f64),
    #[error("empty sample: {0}")]
    EmptySample(String),
    #[error("sampler {family} cannot be run with this spec: {reason}")]
    InvalidSpec { family: String, reason: String },
    #[error("{algorithm} is not pertinent to the {scenario} scenario")]
    NotPertinent { algorithm: String, scenario: String },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("no users with a non-empty evaluation set")]
    NothingToEvaluate,
    #[error("propensity model invalid for tiny dataset ({count} entities)")]
    PropensityInvalid { count: usize },
    #[error("rankings do not cover the same element set: {0}")]
    ElementMismatch(String),
    #[error("no cells available: {0}")]
    EmptyCells(String),
    #[error("eigen-solver did not converge after {iterations} iterations")]
    EigenNoConvergence { iterations: usize },
    #[error("no valid ranking pairs in the meta-dataset")]
    NoPairs,
    #[error("{0}")]
    Config(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
