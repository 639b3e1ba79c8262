//! Interaction storage, loading, preprocessing and train/validation/test
//! splitting.
//!
//! A [`Dataset`] owns its interactions in input order together with per-user
//! and per-item histories (indices into the interaction list, ascending by
//! timestamp, ties in input order). Datasets derived from one another
//! (splits, samples) share the parent's dense id space, so a user id means
//! the same thing in the train set, in a 10% sample of it and in the test
//! set.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    pub timestamp: i64,
}

/// Original (file) identifiers indexed by dense id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMap {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Tsv,
}

impl Format {
    fn delimiter(self) -> u8 {
        match self {
            Format::Csv => b',',
            Format::Tsv => b'\t',
        }
    }

    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") => Format::Tsv,
            _ => Format::Csv,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Explicit,
    Implicit,
    Sequential,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Explicit, Scenario::Implicit, Scenario::Sequential];

    /// Training target under this scenario's view of the data: raw rating for
    /// explicit feedback, a binary positive otherwise.
    #[inline]
    pub fn target(self, rating: f64) -> f64 {
        match self {
            Scenario::Explicit => rating,
            Scenario::Implicit | Scenario::Sequential => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Explicit => "explicit",
            Scenario::Implicit => "implicit",
            Scenario::Sequential => "sequential",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "explicit" => Ok(Scenario::Explicit),
            "implicit" => Ok(Scenario::Implicit),
            "sequential" => Ok(Scenario::Sequential),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    name: String,
    interactions: Vec<Interaction>,
    num_users: usize,
    num_items: usize,
    user_history: Vec<Vec<u32>>,
    item_history: Vec<Vec<u32>>,
    ids: Arc<IdMap>,
}

impl Dataset {
    /// Builds the index structures. `num_users`/`num_items` define the id
    /// space and may exceed the ids actually present.
    pub fn new(
        name: impl Into<String>,
        interactions: Vec<Interaction>,
        num_users: usize,
        num_items: usize,
        ids: Arc<IdMap>,
    ) -> Result<Self> {
        let mut user_history = vec![Vec::new(); num_users];
        let mut item_history = vec![Vec::new(); num_items];
        for (idx, it) in interactions.iter().enumerate() {
            let (u, i) = (it.user as usize, it.item as usize);
            if u >= num_users || i >= num_items {
                return Err(Error::InvalidDataset(format!(
                    "interaction {idx} references user {u}/item {i} outside {num_users}x{num_items}"
                )));
            }
            if !it.rating.is_finite() {
                return Err(Error::InvalidDataset(format!(
                    "interaction {idx} has a non-finite rating"
                )));
            }
            user_history[u].push(idx as u32);
            item_history[i].push(idx as u32);
        }
        // stable: equal timestamps keep input order
        for hist in user_history.iter_mut().chain(item_history.iter_mut()) {
            hist.sort_by_key(|&k| interactions[k as usize].timestamp);
        }
        Ok(Dataset {
            name: name.into(),
            interactions,
            num_users,
            num_items,
            user_history,
            item_history,
            ids,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Size of the user id space.
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    /// Size of the item id space.
    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn user_history(&self, user: usize) -> &[u32] {
        &self.user_history[user]
    }

    pub fn item_history(&self, item: usize) -> &[u32] {
        &self.item_history[item]
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_history[user].len()
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.item_history[item].len()
    }

    /// Users with at least one interaction, ascending.
    pub fn active_users(&self) -> Vec<u32> {
        (0..self.num_users as u32)
            .filter(|&u| !self.user_history[u as usize].is_empty())
            .collect()
    }

    pub fn num_active_users(&self) -> usize {
        self.user_history.iter().filter(|h| !h.is_empty()).count()
    }

    pub fn num_active_items(&self) -> usize {
        self.item_history.iter().filter(|h| !h.is_empty()).count()
    }

    pub fn ids(&self) -> &Arc<IdMap> {
        &self.ids
    }

    /// Items the user interacted with, ascending and deduplicated.
    pub fn user_items(&self, user: usize) -> Vec<u32> {
        let mut items: Vec<u32> = self.user_history[user]
            .iter()
            .map(|&k| self.interactions[k as usize].item)
            .collect();
        items.sort_unstable();
        items.dedup();
        items
    }

    /// Dataset restricted to the given interaction indices, in the same id
    /// space. Indices are applied in ascending order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        let interactions = sorted.iter().map(|&k| self.interactions[k]).collect();
        Dataset::new(
            name,
            interactions,
            self.num_users,
            self.num_items,
            Arc::clone(&self.ids),
        )
        .expect("subset of a valid dataset is valid")
    }

    /// Writes the interactions with their original identifiers in the same
    /// CSV layout [`load_dataset`] reads.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "user_id,item_id,rating,timestamp").map_err(io)?;
        for it in &self.interactions {
            let user = self
                .ids
                .users
                .get(it.user as usize)
                .cloned()
                .unwrap_or_else(|| it.user.to_string());
            let item = self
                .ids
                .items
                .get(it.item as usize)
                .cloned()
                .unwrap_or_else(|| it.item.to_string());
            writeln!(w, "{},{},{},{}", user, item, it.rating, it.timestamp).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Reads an interaction file without preprocessing. Ids are densified in
/// order of first appearance.
pub fn read_raw(path: &Path, format: Format) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut user_ids: HashMap<String, u32> = HashMap::new();
    let mut item_ids: HashMap<String, u32> = HashMap::new();
    let mut ids = IdMap::default();
    let mut interactions = Vec::new();

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!(
                    "expected 4 fields (user,item,rating,timestamp), found {}",
                    record.len()
                ),
            });
        }
        let parse_err = |what: &str, value: &str| Error::Parse {
            line,
            message: format!("invalid {what} '{value}'"),
        };
        let rating: f64 = record[2]
            .parse()
            .map_err(|_| parse_err("rating", &record[2]))?;
        if !rating.is_finite() {
            return Err(parse_err("rating", &record[2]));
        }
        let timestamp: i64 = record[3]
            .parse()
            .map_err(|_| parse_err("timestamp", &record[3]))?;
        if record[0].is_empty() {
            return Err(parse_err("user id", ""));
        }
        if record[1].is_empty() {
            return Err(parse_err("item id", ""));
        }
        let user = *user_ids.entry(record[0].to_string()).or_insert_with(|| {
            ids.users.push(record[0].to_string());
            (ids.users.len() - 1) as u32
        });
        let item = *item_ids.entry(record[1].to_string()).or_insert_with(|| {
            ids.items.push(record[1].to_string());
            (ids.items.len() - 1) as u32
        });
        interactions.push(Interaction {
            user,
            item,
            rating,
            timestamp,
        });
    }
    if interactions.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let (nu, ni) = (ids.users.len(), ids.items.len());
    Dataset::new(name, interactions, nu, ni, Arc::new(ids))
}

/// Reads and preprocesses (minimum three interactions per user).
pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    preprocess(&read_raw(path, format)?, 3)
}

/// Removes users with fewer than `min_interactions` interactions until a
/// fixed point, drops items left without interactions and re-densifies ids
/// (order preserving).
pub fn preprocess(raw: &Dataset, min_interactions: usize) -> Result<Dataset> {
    let mut keep_user = vec![true; raw.num_users];
    loop {
        let mut counts = vec![0usize; raw.num_users];
        for it in &raw.interactions {
            if keep_user[it.user as usize] {
                counts[it.user as usize] += 1;
            }
        }
        let mut changed = false;
        for (u, &c) in counts.iter().enumerate() {
            if keep_user[u] && c < min_interactions {
                keep_user[u] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let kept: Vec<Interaction> = raw
        .interactions
        .iter()
        .filter(|it| keep_user[it.user as usize])
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(Error::Degenerate);
    }

    let mut user_map = vec![u32::MAX; raw.num_users];
    let mut item_map = vec![u32::MAX; raw.num_items];
    let mut ids = IdMap::default();
    for (u, &k) in keep_user.iter().enumerate() {
        if k && !raw.user_history[u].is_empty() {
            user_map[u] = ids.users.len() as u32;
            ids.users.push(original_id(&raw.ids.users, u));
        }
    }
    let mut item_used = vec![false; raw.num_items];
    for it in &kept {
        item_used[it.item as usize] = true;
    }
    for (i, &used) in item_used.iter().enumerate() {
        if used {
            item_map[i] = ids.items.len() as u32;
            ids.items.push(original_id(&raw.ids.items, i));
        }
    }
    let interactions = kept
        .into_iter()
        .map(|it| Interaction {
            user: user_map[it.user as usize],
            item: item_map[it.item as usize],
            ..it
        })
        .collect();
    let (nu, ni) = (ids.users.len(), ids.items.len());
    Dataset::new(raw.name.clone(), interactions, nu, ni, Arc::new(ids))
}

fn original_id(ids: &[String], dense: usize) -> String {
    ids.get(dense).cloned().unwrap_or_else(|| dense.to_string())
}

#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub scenario: Scenario,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl SplitDataset {
    /// Items seen by `user` in train or validation; excluded from the
    /// candidate list when ranking for the test set.
    pub fn known_items(&self, user: usize) -> Vec<u32> {
        let mut items = self.train.user_items(user);
        items.extend(self.validation.user_items(user));
        items.sort_unstable();
        items.dedup();
        items
    }
}

/// Number of validation (and of test) interactions for a user with `n`
/// interactions under the randomized 80/10/10 split.
pub fn holdout_size(n: usize) -> usize {
    ((0.1 * n as f64).round() as usize).max(1)
}

/// Per-user split. Sequential keeps the last two interactions (by time) for
/// validation and test; the other scenarios shuffle each history with the
/// seeded generator and cut 80/10/10.
pub fn split(ds: &Dataset, scenario: Scenario, seed: u64) -> Result<SplitDataset> {
    let mut train = Vec::with_capacity(ds.len());
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut rng = rng::rng(seed, "split");

    for u in 0..ds.num_users {
        let hist = &ds.user_history[u];
        if hist.is_empty() {
            continue;
        }
        let n = hist.len();
        if n < 3 {
            return Err(Error::InvalidDataset(format!(
                "user {u} has {n} interactions; splitting requires at least 3"
            )));
        }
        match scenario {
            Scenario::Sequential => {
                train.extend(hist[..n - 2].iter().map(|&k| k as usize));
                validation.push(hist[n - 2] as usize);
                test.push(hist[n - 1] as usize);
            }
            Scenario::Explicit | Scenario::Implicit => {
                let mut shuffled = hist.clone();
                shuffled.shuffle(&mut rng);
                let h = holdout_size(n);
                validation.extend(shuffled[..h].iter().map(|&k| k as usize));
                test.extend(shuffled[h..2 * h].iter().map(|&k| k as usize));
                train.extend(shuffled[2 * h..].iter().map(|&k| k as usize));
            }
        }
    }
    let base = ds.name();
    Ok(SplitDataset {
        scenario,
        train: ds.subset(format!("{base}/train"), &train),
        validation: ds.subset(format!("{base}/validation"), &validation),
        test: ds.subset(format!("{base}/test"), &test),
    })
}

/// Small JSON record describing an ingested dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub interactions_path: PathBuf,
    pub user_map_path: PathBuf,
    pub item_map_path: PathBuf,
}

impl DatasetManifest {
    /// Writes `interactions.csv`, the two id maps and `manifest.json` into
    /// `dir`.
    pub fn write(ds: &Dataset, dir: &Path) -> Result<DatasetManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let interactions_path = dir.join("interactions.csv");
        ds.write_csv(&interactions_path)?;
        let user_map_path = dir.join("user_map.csv");
        let item_map_path = dir.join("item_map.csv");
        write_id_map(&user_map_path, &ds.ids.users)?;
        write_id_map(&item_map_path, &ds.ids.items)?;
        let manifest = DatasetManifest {
            name: ds.name().to_string(),
            num_users: ds.num_users(),
            num_items: ds.num_items(),
            num_interactions: ds.len(),
            interactions_path,
            user_map_path,
            item_map_path,
        };
        let path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<DatasetManifest> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }

    pub fn load(&self) -> Result<Dataset> {
        Ok(load_dataset(&self.interactions_path, Format::Csv)?.with_name(self.name.clone()))
    }
}

fn write_id_map(path: &Path, ids: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "dense_id,original_id").map_err(io)?;
    for (k, id) in ids.iter().enumerate() {
        writeln!(w, "{k},{id}").map_err(io)?;
    }
    w.flush().map_err(io)
}
