//! Append-only JSON-lines run-store. Each record kind has its own file under
//! the store root; appends go through a single writer lock.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::fnv1a;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Jobs,
    Metrics,
    Reports,
    Samples,
    Taus,
    Psi,
    Embeddings,
}

impl RecordKind {
    pub fn file_name(self) -> &'static str {
        match self {
            RecordKind::Jobs => "jobs.jsonl",
            RecordKind::Metrics => "metrics.jsonl",
            RecordKind::Reports => "eval_reports.jsonl",
            RecordKind::Samples => "samples.jsonl",
            RecordKind::Taus => "taus.jsonl",
            RecordKind::Psi => "psi.jsonl",
            RecordKind::Embeddings => "embeddings.jsonl",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Ok,
    Failed,
}

/// Outcome of one training job; a job whose key has an `Ok` record is
/// never run again.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub key: String,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub key: String,
    pub values: Vec<f64>,
    pub config_hash: String,
}

/// Stable short hash of any serializable configuration.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let body = serde_json::to_vec(config)?;
    Ok(format!("{:016x}", fnv1a(&body)))
}

#[derive(Debug)]
pub struct RunStore {
    root: PathBuf,
    writer: Mutex<()>,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(RunStore {
            root,
            writer: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, kind: RecordKind) -> PathBuf {
        self.root.join(kind.file_name())
    }

    pub fn append<R: Serialize>(&self, kind: RecordKind, record: &R) -> Result<()> {
        self.append_all(kind, std::slice::from_ref(record))
    }

    pub fn append_all<R: Serialize>(&self, kind: RecordKind, records: &[R]) -> Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let mut body = String::new();
        for r in records {
            body.push_str(&serde_json::to_string(r)?);
            body.push('\n');
        }
        let path = self.path(kind);
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.write_all(body.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        f.flush().map_err(|e| Error::io(&path, e))
    }

    /// All records of a kind in file order; a missing file reads as empty.
    pub fn read<R: DeserializeOwned>(&self, kind: RecordKind) -> Result<Vec<R>> {
        let path = self.path(kind);
        let file = match std::fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut out = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: n + 1,
                message: format!("{}: {e}", path.display()),
            })?);
        }
        Ok(out)
    }

    pub fn completed_jobs(&self) -> Result<BTreeSet<String>> {
        Ok(self
            .read::<JobRecord>(RecordKind::Jobs)?
            .into_iter()
            .filter(|j| j.status == JobStatus::Ok)
            .map(|j| j.key)
            .collect())
    }

    /// Appends only records not already present (by value).
    pub fn append_new<R: Serialize + DeserializeOwned + PartialEq>(
        &self,
        kind: RecordKind,
        records: &[R],
    ) -> Result<usize> {
        let existing: Vec<R> = self.read(kind)?;
        let fresh: Vec<&R> = records.iter().filter(|r| !existing.contains(r)).collect();
        self.append_all(kind, &fresh)?;
        Ok(fresh.len())
    }

    pub fn write_file(&self, relative: &str, body: &str) -> Result<PathBuf> {
        let path = self.root.join(relative);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
