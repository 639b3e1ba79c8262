//! The eight non-proxy sampling strategies: three interaction samplers,
//! two user samplers and three graph samplers over the bipartite view of
//! the train set.
//!
//! Every sampler returns indices into the train interactions. Interaction
//! samplers hit the target count exactly; user and graph samplers keep whole
//! users / nodes and therefore overshoot by less than the maximum degree.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{pagerank, BipartiteGraph, PageRankConfig};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerFamily {
    RandomInteraction,
    StratifiedUser,
    TemporalUser,
    RandomUser,
    HeadUser,
    Centrality,
    RandomWalk,
    ForestFire,
    SvpCf,
    SvpCfProp,
}

impl SamplerFamily {
    pub fn is_svp(self) -> bool {
        matches!(self, SamplerFamily::SvpCf | SamplerFamily::SvpCfProp)
    }

    fn as_str(self) -> &'static str {
        match self {
            SamplerFamily::RandomInteraction => "random_interaction",
            SamplerFamily::StratifiedUser => "stratified_user",
            SamplerFamily::TemporalUser => "temporal_user",
            SamplerFamily::RandomUser => "random_user",
            SamplerFamily::HeadUser => "head_user",
            SamplerFamily::Centrality => "centrality",
            SamplerFamily::RandomWalk => "random_walk",
            SamplerFamily::ForestFire => "forest_fire",
            SamplerFamily::SvpCf => "svp_cf",
            SamplerFamily::SvpCfProp => "svp_cf_prop",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleAxis {
    Interactions,
    Users,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyKind {
    BiasOnly,
    #[serde(rename = "mf")]
    MF,
}

impl ProxyKind {
    fn as_str(self) -> &'static str {
        match self {
            ProxyKind::BiasOnly => "bias_only",
            ProxyKind::MF => "mf",
        }
    }
}

/// Identity and parameters of one sampling strategy at one percentage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub family: SamplerFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<SampleAxis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<ProxyKind>,
    pub percent: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub hyperparameters: BTreeMap<String, f64>,
}

pub const DAMPING: &str = "damping";
pub const RESTART_PROBABILITY: &str = "restart_probability";
pub const BURN_PROBABILITY: &str = "burn_probability";
pub const STUCK_FACTOR: &str = "stuck_factor";

/// Canonical names of the sixteen strategies.
pub const ROSTER: [&str; 16] = [
    "random_interaction",
    "stratified_user",
    "temporal_user",
    "random_user",
    "head_user",
    "centrality",
    "random_walk",
    "forest_fire",
    "svp_cf_bias_only_interactions",
    "svp_cf_mf_interactions",
    "svp_cf_prop_bias_only_interactions",
    "svp_cf_prop_mf_interactions",
    "svp_cf_bias_only_users",
    "svp_cf_mf_users",
    "svp_cf_prop_bias_only_users",
    "svp_cf_prop_mf_users",
];

/// Sampling percentages of the benchmark protocol.
pub const PERCENTS: [f64; 6] = [80.0, 60.0, 40.0, 20.0, 10.0, 1.0];

impl SamplerSpec {
    pub fn new(family: SamplerFamily, percent: f64, seed: u64) -> Self {
        SamplerSpec {
            family,
            axis: None,
            proxy: None,
            percent,
            seed,
            hyperparameters: BTreeMap::new(),
        }
    }

    pub fn svp(
        family: SamplerFamily,
        proxy: ProxyKind,
        axis: SampleAxis,
        percent: f64,
        seed: u64,
    ) -> Self {
        SamplerSpec {
            axis: Some(axis),
            proxy: Some(proxy),
            ..SamplerSpec::new(family, percent, seed)
        }
    }

    /// Parses a canonical strategy name (see [`ROSTER`]).
    pub fn parse(name: &str, percent: f64, seed: u64) -> Result<Self> {
        use SamplerFamily::*;
        let simple = [
            RandomInteraction,
            StratifiedUser,
            TemporalUser,
            RandomUser,
            HeadUser,
            Centrality,
            RandomWalk,
            ForestFire,
        ];
        if let Some(&f) = simple.iter().find(|f| f.as_str() == name) {
            return Ok(SamplerSpec::new(f, percent, seed));
        }
        let (family, rest) = if let Some(rest) = name.strip_prefix("svp_cf_prop_") {
            (SvpCfProp, rest)
        } else if let Some(rest) = name.strip_prefix("svp_cf_") {
            (SvpCf, rest)
        } else {
            return Err(Error::Config(format!("unknown sampler '{name}'")));
        };
        let (proxy, axis) = match rest {
            "bias_only_interactions" => (ProxyKind::BiasOnly, SampleAxis::Interactions),
            "mf_interactions" => (ProxyKind::MF, SampleAxis::Interactions),
            "bias_only_users" => (ProxyKind::BiasOnly, SampleAxis::Users),
            "mf_users" => (ProxyKind::MF, SampleAxis::Users),
            _ => return Err(Error::Config(format!("unknown sampler '{name}'"))),
        };
        Ok(SamplerSpec::svp(family, proxy, axis, percent, seed))
    }

    pub fn name(&self) -> String {
        match (self.family.is_svp(), self.proxy, self.axis) {
            (true, Some(proxy), Some(axis)) => {
                let axis = match axis {
                    SampleAxis::Interactions => "interactions",
                    SampleAxis::Users => "users",
                };
                format!("{}_{}_{}", self.family.as_str(), proxy.as_str(), axis)
            }
            _ => self.family.as_str().to_string(),
        }
    }

    pub fn with_hyperparameter(mut self, key: &str, value: f64) -> Self {
        self.hyperparameters.insert(key.to_string(), value);
        self
    }

    pub fn hyper(&self, key: &str, default: f64) -> f64 {
        self.hyperparameters.get(key).copied().unwrap_or(default)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.percent > 0.0 && self.percent <= 100.0) || !self.percent.is_finite() {
            return Err(Error::InvalidPercent(self.percent));
        }
        if self.family.is_svp() && (self.axis.is_none() || self.proxy.is_none()) {
            return Err(Error::InvalidSpec {
                family: self.family.as_str().into(),
                reason: "proxy-based samplers need an axis and a proxy".into(),
            });
        }
        Ok(())
    }

    /// Hyperparameters this family reads but the spec leaves at an assumed
    /// default.
    pub fn assumed_defaults(&self) -> Vec<String> {
        let keys: &[&str] = match self.family {
            SamplerFamily::Centrality => &[DAMPING],
            SamplerFamily::RandomWalk => &[RESTART_PROBABILITY, STUCK_FACTOR],
            SamplerFamily::ForestFire => &[BURN_PROBABILITY],
            _ => &[],
        };
        keys.iter()
            .filter(|k| !self.hyperparameters.contains_key(**k))
            .map(|k| k.to_string())
            .collect()
    }
}

impl fmt::Display for SamplerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name(), self.percent)
    }
}

impl FromStr for SamplerFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerSpec::parse(s, 100.0, 0).map(|spec| spec.family)
    }
}

/// `floor(p/100 * n)`, robust to the binary representation of `p`.
pub fn target_count(percent: f64, n: usize) -> usize {
    let exact = percent * n as f64 / 100.0;
    let t = (exact + 1e-9).floor() as usize;
    t.min(n)
}

#[derive(Clone, Debug)]
pub struct SampleResult {
    pub subset: Dataset,
    pub target_count: usize,
    pub actual_count: usize,
    pub spec: SamplerSpec,
    /// Retained train interaction indices, ascending.
    pub provenance: Vec<usize>,
    /// Users active in train that lost every interaction.
    pub dropped_users: Vec<u32>,
}

/// On-disk provenance record accompanying a sample CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub sampler: String,
    pub spec: SamplerSpec,
    pub seed: u64,
    pub train_count: usize,
    pub target_count: usize,
    pub actual_count: usize,
    pub dropped_users: usize,
    pub assumed_defaults: Vec<String>,
    pub wall_time_ms: f64,
}

impl SampleResult {
    pub(crate) fn build(
        train: &Dataset,
        spec: &SamplerSpec,
        target_count: usize,
        mut kept: Vec<usize>,
    ) -> Self {
        kept.sort_unstable();
        let subset = train.subset(format!("{}/{}", train.name(), spec), &kept);
        let dropped_users = (0..train.num_users())
            .filter(|&u| train.user_degree(u) > 0 && subset.user_degree(u) == 0)
            .map(|u| u as u32)
            .collect();
        SampleResult {
            actual_count: kept.len(),
            subset,
            target_count,
            spec: spec.clone(),
            provenance: kept,
            dropped_users,
        }
    }

    pub fn manifest(&self, train_count: usize, wall_time_ms: f64) -> SampleManifest {
        SampleManifest {
            sampler: self.spec.name(),
            spec: self.spec.clone(),
            seed: self.spec.seed,
            train_count,
            target_count: self.target_count,
            actual_count: self.actual_count,
            dropped_users: self.dropped_users.len(),
            assumed_defaults: self.spec.assumed_defaults(),
            wall_time_ms,
        }
    }

    /// Writes `<stem>.csv` (subset) and `<stem>.json` (provenance).
    pub fn write(
        &self,
        dir: &Path,
        stem: &str,
        train_count: usize,
        wall_time_ms: f64,
    ) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.subset.write_csv(&dir.join(format!("{stem}.csv")))?;
        let path = dir.join(format!("{stem}.json"));
        let body = serde_json::to_string_pretty(&self.manifest(train_count, wall_time_ms))?;
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}

pub(crate) fn checked_target(train: &Dataset, spec: &SamplerSpec) -> Result<usize> {
    spec.validate()?;
    let target = target_count(spec.percent, train.len());
    if target == 0 {
        return Err(Error::EmptySample(format!(
            "{}% of {} interactions rounds down to zero",
            spec.percent,
            train.len()
        )));
    }
    Ok(target)
}

pub(crate) fn sampler_rng(spec: &SamplerSpec) -> Rng {
    rng::rng(spec.seed, &format!("sampler/{}", spec.name()))
}

/// Runs one of the eight non-proxy strategies.
pub fn draw(train: &Dataset, spec: &SamplerSpec) -> Result<SampleResult> {
    match spec.family {
        SamplerFamily::RandomInteraction => random_interaction(train, spec),
        SamplerFamily::StratifiedUser => stratified_user(train, spec),
        SamplerFamily::TemporalUser => temporal_user(train, spec),
        SamplerFamily::RandomUser => random_user(train, spec),
        SamplerFamily::HeadUser => head_user(train, spec),
        SamplerFamily::Centrality => centrality_sample(train, spec),
        SamplerFamily::RandomWalk => random_walk_sample(train, spec),
        SamplerFamily::ForestFire => forest_fire_sample(train, spec),
        SamplerFamily::SvpCf | SamplerFamily::SvpCfProp => Err(Error::InvalidSpec {
            family: spec.name(),
            reason: "proxy-based samplers need a trained proxy (see svp::svp_sample)".into(),
        }),
    }
}

pub fn random_interaction(train: &Dataset, spec: &SamplerSpec) -> Result<SampleResult> {
    let target = checked_target(train, spec)?;
    let mut rng = sampler_rng(spec);
    let kept = rand::seq::index::sample(&mut rng, train.len(), target).into_vec();
    Ok(SampleResult::build(train, spec, target, kept))
}

/// Per-user quotas `round(p/100 * n_u)` (at least one), reconciled one
/// interaction at a time against the exact global target. Users whose
/// rounding error is largest in the needed direction move first; ties are
/// broken by a seeded permutation.
fn user_quotas(train: &Dataset, percent: f64, target: usize, rng: &mut Rng) -> Vec<usize> {
    let frac = percent / 100.0;
    let nu = train.num_users();
    let degree: Vec<usize> = (0..nu).map(|u| train.user_degree(u)).collect();
    let ideal: Vec<f64> = degree.iter().map(|&n| frac * n as f64).collect();
    let mut quota: Vec<usize> = (0..nu)
        .map(|u| match degree[u] {
            0 => 0,
            n => (ideal[u].round() as usize).clamp(1, n),
        })
        .collect();
    let mut tiebreak: Vec<usize> = (0..nu).collect();
    tiebreak.shuffle(rng);
    let mut rank = vec![0usize; nu];
    for (pos, &u) in tiebreak.iter().enumerate() {
        rank[u] = pos;
    }

    loop {
        let total: usize = quota.iter().sum();
        if total == target {
            break;
        }
        let shrink = total > target;
        let mut candidates: Vec<usize> = (0..nu)
            .filter(|&u| {
                if shrink {
                    quota[u] > 0
                } else {
                    quota[u] < degree[u]
                }
            })
            .collect();
        let error = |u: usize| {
            if shrink {
                quota[u] as f64 - ideal[u]
            } else {
                ideal[u] - quota[u] as f64
            }
        };
        candidates.sort_by(|&a, &b| error(b).total_cmp(&error(a)).then(rank[a].cmp(&rank[b])));
        let need = total.abs_diff(target);
        for &u in candidates.iter().take(need) {
            if shrink {
                quota[u] -= 1;
            } else {
                quota[u] += 1;
            }
        }
    }
    quota
}

pub fn stratified_user(train: &Dataset, spec: &SamplerSpec) -> Result<SampleResult> {
    let target = checked_target(train, spec)?;
    let mut rng = sampler_rng(spec);
    let quota = user_quotas(train, spec.percent, target, &mut rng);
    let mut kept = Vec::with_capacity(target);
    for (u, &q) in quota.iter().enumerate() {
        let mut hist = train.user_history(u).to_vec();
        hist.shuffle(&mut rng);
        kept.extend(hist[..q].iter().map(|&k| k as usize));
    }
    Ok(SampleResult::build(train, spec, target, kept))
}

pub fn temporal_user(train: &Dataset, spec: &SamplerSpec) -> Result<SampleResult> {
    let target = checked_target(train, spec)?;
    let mut rng = sampler_rng(spec);
    let quota = user_quotas(train, spec.percent, target, &mut rng);
    let mut kept = Vec::with_capacity(target);
    for (u, &q) in quota.iter().enumerate() {
        let hist = train.user_history(u);
        kept.extend(hist[hist.len() - q..].iter().map(|&k| k as usize));
    }
    Ok(SampleResult::build(train, spec, target, kept))
}

pub(crate) fn keep_users_in_order(
    train: &Dataset,
    spec: &SamplerSpec,
    target: usize,
    order: &[u32],
) -> SampleResult {
    let mut kept = Vec::with_capacity(target);
    for &u in order {
        if kept.len() >= target {
            break;
        }
        kept.extend(train.user_history(u as usize).iter().map(|&k| k as usize));
    }
    SampleResult::build(train, spec, target, kept)
}

pub fn random_user(train: &Dataset, spec: &SamplerSpec) -> Result<SampleResult> {
    let target = checked_target(train, spec)?;
    let mut rng = sampler_rng(spec);
    let mut users = train.active_users();
    users.shuffle(&mut rng);
    Ok(keep_users_in_order(train, spec, target, &users))
}

pub fn head_user(train: &Dataset, spec: &SamplerSpec) -> Result<SampleResult> {
    let target = checked_target(train, spec)?;
    let mut users = train.active_users();
    users.sort_by(|&a, &b| {
        train
            .user_degree(b as usize)
            .cmp(&train.user_degree(a as usize))
            .then(a.cmp(&b))
    });
    Ok(keep_users_in_order(train, spec, target, &users))
}

pub fn centrality_sample(train: &Dataset, spec: &SamplerSpec) -> Result<SampleResult> {
    let target = checked_target(train, spec)?;
    let graph = BipartiteGraph::from_dataset(train);
    let config = PageRankConfig {
        damping: spec.hyper(DAMPING, 0.85),
        ..PageRankConfig::default()
    };
    let (scores, _) = pagerank::<f64>(&graph, &config);
    let mut nodes: Vec<usize> = (0..graph.num_nodes()).collect();
    nodes.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut retained = vec![false; graph.num_edges()];
    let mut kept = Vec::with_capacity(target);
    for v in nodes {
        if kept.len() >= target {
            break;
        }
        for &(_, e) in graph.neighbors(v) {
            if !retained[e as usize] {
                retained[e as usize] = true;
                kept.push(e as usize);
            }
        }
    }
    Ok(SampleResult::build(train, spec, target, kept))
}

/// Random walk with restart. Each traversed edge is retained; after
/// `stuck_factor * |V|` consecutive steps without a new edge the walk jumps
/// to a fresh uniformly random node and restarts from there.
pub fn random_walk_sample(train: &Dataset, spec: &SamplerSpec) -> Result<SampleResult> {
    let target = checked_target(train, spec)?;
    let graph = BipartiteGraph::from_dataset(train);
    let restart = spec.hyper(RESTART_PROBABILITY, 0.15);
    let nodes = graph.active_nodes();
    let patience = (spec.hyper(STUCK_FACTOR, 100.0) * nodes.len() as f64).max(1.0) as usize;
    let mut rng = sampler_rng(spec);

    let mut retained = vec![false; graph.num_edges()];
    let mut kept = Vec::with_capacity(target);
    let mut start = nodes[rng.random_range(0..nodes.len())] as usize;
    let mut current = start;
    let mut stale = 0usize;
    while kept.len() < target {
        if stale >= patience {
            start = nodes[rng.random_range(0..nodes.len())] as usize;
            current = start;
            stale = 0;
            continue;
        }
        if rng.random::<f64>() < restart {
            current = start;
            stale += 1;
            continue;
        }
        let nbrs = graph.neighbors(current);
        let (next, e) = nbrs[rng.random_range(0..nbrs.len())];
        if retained[e as usize] {
            stale += 1;
        } else {
            retained[e as usize] = true;
            kept.push(e as usize);
            stale = 0;
        }
        current = next as usize;
    }
    Ok(SampleResult::build(train, spec, target, kept))
}

/// Number of neighbors one node burns: geometric with mean `p / (1 - p)`.
pub fn burn_count(rng: &mut Rng, burn_probability: f64) -> usize {
    Geometric::new(1.0 - burn_probability)
        .expect("burn probability in [0, 1)")
        .sample(rng) as usize
}

/// Forest fire. A fire starts at a random node that still has unretained
/// edges and spreads breadth-first: each burning node ignites a geometric
/// number of neighbors not yet reached by this fire, over edges not yet
/// retained, and those edges are retained. When the fire dies out a new one
/// is lit; retained edges accumulate across fires.
pub fn forest_fire_sample(train: &Dataset, spec: &SamplerSpec) -> Result<SampleResult> {
    let target = checked_target(train, spec)?;
    let graph = BipartiteGraph::from_dataset(train);
    let burn = spec.hyper(BURN_PROBABILITY, 0.7);
    if !(0.0..1.0).contains(&burn) {
        return Err(Error::InvalidSpec {
            family: spec.name(),
            reason: format!("burn probability {burn} outside [0, 1)"),
        });
    }
    let mut rng = sampler_rng(spec);
    let n = graph.num_nodes();
    let mut open: Vec<usize> = (0..n).map(|v| graph.degree(v)).collect();
    let mut retained = vec![false; graph.num_edges()];
    let mut kept = Vec::with_capacity(target);
    let mut stamp = vec![0u32; n];
    let mut fire = 0u32;
    let mut queue = VecDeque::new();
    let mut candidates: Vec<(u32, u32)> = Vec::new();

    while kept.len() < target {
        let ignition = pick_open_node(&open, &mut rng);
        fire += 1;
        stamp[ignition] = fire;
        queue.clear();
        queue.push_back(ignition);
        while let Some(v) = queue.pop_front() {
            if kept.len() >= target {
                break;
            }
            let want = burn_count(&mut rng, burn);
            if want == 0 {
                continue;
            }
            candidates.clear();
            candidates.extend(
                graph
                    .neighbors(v)
                    .iter()
                    .filter(|&&(w, e)| !retained[e as usize] && stamp[w as usize] != fire),
            );
            candidates.shuffle(&mut rng);
            let mut burned = 0;
            for &(w, e) in &candidates {
                if burned == want || kept.len() >= target {
                    break;
                }
                if stamp[w as usize] == fire {
                    continue;
                }
                stamp[w as usize] = fire;
                retained[e as usize] = true;
                kept.push(e as usize);
                open[v] -= 1;
                open[w as usize] -= 1;
                queue.push_back(w as usize);
                burned += 1;
            }
        }
    }
    Ok(SampleResult::build(train, spec, target, kept))
}

fn pick_open_node(open: &[usize], rng: &mut Rng) -> usize {
    for _ in 0..64 {
        let v = rng.random_range(0..open.len());
        if open[v] > 0 {
            return v;
        }
    }
    let live: Vec<usize> = (0..open.len()).filter(|&v| open[v] > 0).collect();
    live[rng.random_range(0..live.len())]
}
