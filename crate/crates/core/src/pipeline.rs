//! Experiment grid over datasets, scenarios, samplers, percents and seeds,
//! persisted in a [`RunStore`], plus the reductions that turn it into Ψ
//! tables and a trained genie.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::{
    compute_all_psi, p_mle_csv, p_mle_rows, p_mle_svg, psi_coverage_csv, psi_table_csv,
    tau_records, MetricRecord, PsiSummary, FULL,
};
use crate::dataset::{split, Dataset, Scenario, SplitDataset};
use crate::error::{Error, Result};
use crate::featurizer::{featurize, FeaturizeConfig};
use crate::genie::{
    build_meta_dataset, evaluate_genie, full_key, p_at_1, rank_samplers, sample_key,
    split_meta_dataset, train_genie, GenieConfig, GenieEval, GenieMode, GenieModel, RankContext,
    RankedSampler,
};
use crate::recommenders::{pertinent_algorithms, tune, Algorithm, HyperGrid, Metric, TrainingData};
use crate::rng::derive_seed;
use crate::samplers::{SampleAxis, SampleResult, SamplerFamily, SamplerSpec, PERCENTS, ROSTER};
use crate::store::{config_hash, EmbeddingRecord, JobRecord, JobStatus, RecordKind, RunStore};
use crate::svp::{
    importance_from_deltas, interaction_deltas, propensity, sample_by_importance, train_proxy,
    ImportanceTable, ProxyConfig, PROPENSITY_A, PROPENSITY_B,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub samplers: Vec<String>,
    pub percents: Vec<f64>,
    pub scenarios: Vec<Scenario>,
    pub seeds: Vec<u64>,
    /// Search-space overrides; the most specific match wins and anything
    /// unmatched uses the default grid.
    pub grids: Vec<GridOverride>,
    pub proxy: ProxyConfig,
    /// Embeds every full train set and sample when set.
    pub featurize: Option<FeaturizeConfig>,
    /// Worker threads for the job pool.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            samplers: ROSTER.iter().map(|s| s.to_string()).collect(),
            percents: PERCENTS.to_vec(),
            scenarios: Scenario::ALL.to_vec(),
            seeds: vec![0],
            grids: Vec::new(),
            proxy: ProxyConfig::default(),
            featurize: None,
            jobs: 1,
        }
    }
}

impl BenchmarkConfig {
    pub fn grid(&self, algorithm: Algorithm, scenario: Scenario) -> HyperGrid {
        let exact = self
            .grids
            .iter()
            .find(|g| g.algorithm == algorithm && g.scenario == Some(scenario));
        let any = self
            .grids
            .iter()
            .find(|g| g.algorithm == algorithm && g.scenario.is_none());
        exact.or(any).map(|g| g.grid.clone()).unwrap_or_default()
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.samplers {
            SamplerSpec::parse(s, 100.0, 0)?;
        }
        for &p in &self.percents {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::InvalidPercent(p));
            }
        }
        if self.seeds.is_empty() || self.scenarios.is_empty() {
            return Err(Error::Config(
                "need at least one seed and one scenario".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOverride {
    pub algorithm: Algorithm,
    /// `None` applies to every scenario.
    #[serde(default)]
    pub scenario: Option<Scenario>,
    pub grid: HyperGrid,
}

/// Identity of one training job.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JobKey {
    pub dataset: String,
    pub scenario: Scenario,
    pub sampler: String,
    pub percent_milli: u64,
    pub algorithm: Algorithm,
    pub seed: u64,
}

impl JobKey {
    pub fn percent(&self) -> f64 {
        self.percent_milli as f64 / 1000.0
    }

    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}",
            self.dataset,
            self.scenario,
            self.sampler,
            self.percent(),
            self.algorithm,
            self.seed
        )
    }
}

fn milli(p: f64) -> u64 {
    (p * 1000.0).round() as u64
}

/// Every training job of the grid: one per pertinent algorithm on the full
/// train set and one per (sampler, percent, pertinent algorithm).
pub fn plan(dataset_names: &[String], config: &BenchmarkConfig) -> Vec<JobKey> {
    let mut jobs = Vec::new();
    for d in dataset_names {
        for &f in &config.scenarios {
            for &seed in &config.seeds {
                let cells = std::iter::once((FULL.to_string(), 100.0)).chain(
                    config
                        .samplers
                        .iter()
                        .flat_map(|s| config.percents.iter().map(move |&p| (s.clone(), p))),
                );
                for (sampler, p) in cells {
                    for a in pertinent_algorithms(f) {
                        jobs.push(JobKey {
                            dataset: d.clone(),
                            scenario: f,
                            sampler: sampler.clone(),
                            percent_milli: milli(p),
                            algorithm: a,
                            seed,
                        });
                    }
                }
            }
        }
    }
    jobs
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchmarkOutcome {
    pub planned: usize,
    pub skipped: usize,
    pub completed: usize,
    pub failed: Vec<(String, String)>,
    pub psi: Vec<PsiSummary>,
}

pub fn split_seed(seed: u64, dataset: &str) -> u64 {
    derive_seed(seed, &format!("split/{dataset}"))
}

pub fn sampler_seed(seed: u64, dataset: &str, scenario: Scenario) -> u64 {
    derive_seed(seed, &format!("sample/{dataset}/{scenario}"))
}

/// Same for the full run and every sample, so that a 100% sample trains
/// exactly the model of the full run.
pub fn train_seed(seed: u64, dataset: &str, scenario: Scenario, algorithm: Algorithm) -> u64 {
    derive_seed(seed, &format!("train/{dataset}/{scenario}/{algorithm}"))
}

type SvpTables = BTreeMap<(SamplerFamily, crate::samplers::ProxyKind, SampleAxis), ImportanceTable>;

/// Importance tables for every proxy-based spec among `specs`, training each
/// proxy once.
fn svp_tables(
    train: &Dataset,
    scenario: Scenario,
    specs: &[SamplerSpec],
    proxy: &ProxyConfig,
) -> Result<SvpTables> {
    let wanted: BTreeSet<_> = specs
        .iter()
        .filter(|s| s.family.is_svp())
        .filter_map(|s| Some((s.family, s.proxy?, s.axis?, s.seed)))
        .collect();
    let proxies: BTreeSet<_> = wanted.iter().map(|w| (w.1, w.3)).collect();
    let deltas: BTreeMap<_, _> = proxies
        .par_iter()
        .map(|&(kind, seed)| -> Result<_> {
            let trace = train_proxy::<f64>(train, scenario, kind, proxy, seed)?;
            Ok((kind, interaction_deltas(&trace, train)))
        })
        .collect::<Result<_>>()?;
    let prop = if wanted.iter().any(|w| w.0 == SamplerFamily::SvpCfProp) {
        Some(propensity(train, PROPENSITY_A, PROPENSITY_B)?)
    } else {
        None
    };
    let mut out = BTreeMap::new();
    for (family, kind, axis, _) in wanted {
        let (d, excluded) = &deltas[&kind];
        let p = if family == SamplerFamily::SvpCfProp {
            prop.as_ref()
        } else {
            None
        };
        out.insert(
            (family, kind, axis),
            importance_from_deltas(train, d, excluded.clone(), axis, p),
        );
    }
    Ok(out)
}

fn materialize(train: &Dataset, spec: &SamplerSpec, tables: &SvpTables) -> Result<SampleResult> {
    if spec.family.is_svp() {
        let key = (
            spec.family,
            spec.proxy.expect("svp spec"),
            spec.axis.expect("svp spec"),
        );
        sample_by_importance(train, &tables[&key], spec)
    } else {
        crate::samplers::draw(train, spec)
    }
}

struct Cell {
    sampler: String,
    percent: f64,
    pending: Vec<JobKey>,
    embed: bool,
}

/// Runs every job of the grid not already completed in `store`, then
/// recomputes taus, Ψ and the P_MLE heatmap from the whole store.
pub fn run_benchmark(
    store: &RunStore,
    datasets: &[Dataset],
    config: &BenchmarkConfig,
) -> Result<BenchmarkOutcome> {
    config.validate()?;
    let hash = config.hash()?;
    store.write_file(
        &format!("config-{hash}.json"),
        &serde_json::to_string_pretty(config)?,
    )?;
    let names: Vec<String> = datasets.iter().map(|d| d.name().to_string()).collect();
    let planned = plan(&names, config);
    let done = store.completed_jobs()?;
    let embedded: BTreeSet<String> = store
        .read::<EmbeddingRecord>(RecordKind::Embeddings)?
        .into_iter()
        .map(|e| e.key)
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let failed = Mutex::new(Vec::new());
    let completed = Mutex::new(0usize);
    let mut skipped = 0;
    for ds in datasets {
        for &f in &config.scenarios {
            for (si, &seed) in config.seeds.iter().enumerate() {
                let mine: Vec<&JobKey> = planned
                    .iter()
                    .filter(|k| k.dataset == ds.name() && k.scenario == f && k.seed == seed)
                    .collect();
                let mut cells: BTreeMap<(String, u64), Cell> = BTreeMap::new();
                for k in &mine {
                    let cell = cells
                        .entry((k.sampler.clone(), k.percent_milli))
                        .or_insert_with(|| Cell {
                            sampler: k.sampler.clone(),
                            percent: k.percent(),
                            pending: Vec::new(),
                            embed: false,
                        });
                    if done.contains(&k.key()) {
                        skipped += 1;
                    } else {
                        cell.pending.push((*k).clone());
                    }
                }
                if let (Some(_), 0) = (config.featurize, si) {
                    for c in cells.values_mut() {
                        let key = if c.sampler == FULL {
                            full_key(ds.name(), f)
                        } else {
                            sample_key(ds.name(), f, &c.sampler, c.percent)
                        };
                        c.embed = !embedded.contains(&key);
                    }
                }
                let cells: Vec<Cell> = cells
                    .into_values()
                    .filter(|c| !c.pending.is_empty() || c.embed)
                    .collect();
                if cells.is_empty() {
                    continue;
                }
                let s = split(ds, f, split_seed(seed, ds.name()))?;
                let sseed = sampler_seed(seed, ds.name(), f);
                let specs: Vec<SamplerSpec> = cells
                    .iter()
                    .filter(|c| c.sampler != FULL)
                    .map(|c| SamplerSpec::parse(&c.sampler, c.percent, sseed))
                    .collect::<Result<_>>()?;
                let tables = match pool.install(|| svp_tables(&s.train, f, &specs, &config.proxy)) {
                    Ok(t) => t,
                    Err(e) => {
                        log::error!("proxy training failed for {}/{f}: {e}", ds.name());
                        BTreeMap::new()
                    }
                };
                pool.install(|| {
                    cells.par_iter().for_each(|cell| {
                        let r = run_cell(store, ds.name(), &s, cell, sseed, &tables, config, &hash);
                        let mut fails = failed.lock().unwrap_or_else(|e| e.into_inner());
                        *completed.lock().unwrap_or_else(|e| e.into_inner()) += r.0;
                        fails.extend(r.1);
                    })
                });
            }
        }
    }

    let psi = write_reports(store)?;
    let mut failed = failed.into_inner().unwrap_or_else(|e| e.into_inner());
    failed.sort();
    Ok(BenchmarkOutcome {
        planned: planned.len(),
        skipped,
        completed: completed.into_inner().unwrap_or_else(|e| e.into_inner()),
        failed,
        psi,
    })
}

fn fail_all(store: &RunStore, jobs: &[JobKey], err: &Error, hash: &str) -> Vec<(String, String)> {
    jobs.iter()
        .map(|k| {
            let rec = JobRecord {
                key: k.key(),
                status: JobStatus::Failed,
                error: Some(err.to_string()),
                seed: k.seed,
                config_hash: hash.to_string(),
            };
            if let Err(e) = store.append(RecordKind::Jobs, &rec) {
                log::error!("cannot record failure of {}: {e}", k.key());
            }
            (k.key(), err.to_string())
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    store: &RunStore,
    dataset: &str,
    s: &SplitDataset,
    cell: &Cell,
    sseed: u64,
    tables: &SvpTables,
    config: &BenchmarkConfig,
    hash: &str,
) -> (usize, Vec<(String, String)>) {
    let dataset = dataset.to_string();
    let f = s.scenario;
    let sample;
    let fit = if cell.sampler == FULL {
        &s.train
    } else {
        let started = Instant::now();
        let drawn = SamplerSpec::parse(&cell.sampler, cell.percent, sseed)
            .and_then(|spec| materialize(&s.train, &spec, tables));
        match drawn {
            Ok(r) => {
                let mut manifest = serde_json::to_value(
                    r.manifest(s.train.len(), started.elapsed().as_secs_f64() * 1000.0),
                )
                .unwrap_or_default();
                manifest["key"] =
                    serde_json::Value::String(sample_key(&dataset, f, &cell.sampler, cell.percent));
                // wall time varies run to run; keep it out of the record so reruns stay identical
                manifest["wall_time_ms"] = serde_json::Value::from(0.0);
                if let Err(e) = store.append_new(RecordKind::Samples, &[manifest]) {
                    log::warn!("sample manifest not stored: {e}");
                }
                sample = r.subset;
                &sample
            }
            Err(e) => {
                log::warn!("{dataset}/{f}/{}/{}: {e}", cell.sampler, cell.percent);
                return (0, fail_all(store, &cell.pending, &e, hash));
            }
        }
    };
    if cell.embed {
        if let Some(fc) = &config.featurize {
            let key = if cell.sampler == FULL {
                full_key(&dataset, f)
            } else {
                sample_key(&dataset, f, &cell.sampler, cell.percent)
            };
            match featurize::<f64>(fit, fc) {
                Ok(e) => {
                    let rec = EmbeddingRecord {
                        key,
                        values: e.to_vec(),
                        config_hash: hash.to_string(),
                    };
                    if let Err(e) = store.append(RecordKind::Embeddings, &rec) {
                        log::error!("embedding not stored: {e}");
                    }
                }
                Err(e) => log::warn!("featurization of {key} failed: {e}"),
            }
        }
    }
    let mut completed = 0;
    let mut failures = Vec::new();
    for job in &cell.pending {
        let a = job.algorithm;
        let result = tune::<f64>(
            a,
            TrainingData::sampled(s, fit),
            &config.grid(a, f),
            train_seed(job.seed, &dataset, f, a),
        );
        match result {
            Ok((_, report)) => {
                let metrics: Vec<MetricRecord> = report
                    .metrics
                    .iter()
                    .map(|(&m, &v)| MetricRecord {
                        dataset: dataset.clone(),
                        scenario: f,
                        sampler: cell.sampler.clone(),
                        percent: cell.percent,
                        algorithm: a,
                        metric: m,
                        value: v,
                        seed: job.seed,
                        config_hash: hash.to_string(),
                    })
                    .collect();
                let stored = store
                    .append_all(RecordKind::Metrics, &metrics)
                    .and_then(|_| store.append(RecordKind::Reports, &(job.key(), &report)))
                    .and_then(|_| {
                        store.append(
                            RecordKind::Jobs,
                            &JobRecord {
                                key: job.key(),
                                status: JobStatus::Ok,
                                error: None,
                                seed: job.seed,
                                config_hash: hash.to_string(),
                            },
                        )
                    });
                match stored {
                    Ok(()) => completed += 1,
                    Err(e) => failures.push((job.key(), e.to_string())),
                }
            }
            Err(e) => {
                log::warn!("job {} failed: {e}", job.key());
                failures.extend(fail_all(store, std::slice::from_ref(job), &e, hash));
            }
        }
    }
    (completed, failures)
}

/// Recomputes taus and Ψ from the store's metric records, appends new tau
/// and Ψ records and writes the CSV/SVG reports under `reports/`.
pub fn write_reports(store: &RunStore) -> Result<Vec<PsiSummary>> {
    let metrics: Vec<MetricRecord> = store.read(RecordKind::Metrics)?;
    let taus = tau_records(&metrics)?;
    store.append_new(RecordKind::Taus, &taus)?;
    let psi = compute_all_psi(&metrics);
    store.append_new(RecordKind::Psi, &psi)?;
    store.write_file("reports/psi.csv", &psi_table_csv(&psi))?;
    store.write_file("reports/psi_coverage.csv", &psi_coverage_csv(&psi))?;
    let rows = p_mle_rows(&metrics);
    store.write_file("reports/p_mle.csv", &p_mle_csv(&rows))?;
    store.write_file("reports/p_mle.svg", &p_mle_svg(&rows))?;
    Ok(psi)
}

/// Last embedding stored under each key.
pub fn embeddings(store: &RunStore) -> Result<BTreeMap<String, Vec<f64>>> {
    Ok(store
        .read::<EmbeddingRecord>(RecordKind::Embeddings)?
        .into_iter()
        .map(|e| (e.key, e.values))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenieReport {
    pub mode: GenieMode,
    pub seed: u64,
    pub examples: usize,
    pub train_examples: usize,
    pub validation_examples: usize,
    pub test_examples: usize,
    pub test: GenieEval,
    /// Sanity ordering only: expected to be at least the test P@1.
    pub train_p_at_1: f64,
}

pub fn genie_report_text(r: &GenieReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mode,{}", mode_name(r.mode));
    let _ = writeln!(s, "seed,{}", r.seed);
    let _ = writeln!(s, "examples,{}", r.examples);
    let _ = writeln!(
        s,
        "split,{}/{}/{}",
        r.train_examples, r.validation_examples, r.test_examples
    );
    let _ = writeln!(s, "test_groups,{}", r.test.groups);
    let _ = writeln!(s, "p_at_1_genie,{:.6}", r.test.p_at_1);
    let _ = writeln!(s, "p_at_1_random,{:.6}", r.test.random);
    let _ = writeln!(s, "p_at_1_best_static,{:.6}", r.test.best_static);
    let _ = writeln!(s, "p_at_1_least_squares,{:.6}", r.test.least_squares);
    if let Some(m) = r.test.mse {
        let _ = writeln!(s, "mse,{m:.6}");
    }
    let _ = writeln!(s, "p_at_1_train,{:.6}", r.train_p_at_1);
    s
}

fn meta_split(store: &RunStore, seed: u64) -> Result<(usize, crate::genie::MetaSplit)> {
    let metrics: Vec<MetricRecord> = store.read(RecordKind::Metrics)?;
    let taus = tau_records(&metrics)?;
    let examples = build_meta_dataset(&taus, &embeddings(store)?);
    Ok((examples.len(), split_meta_dataset(&examples, seed)))
}

pub fn mode_name(mode: GenieMode) -> &'static str {
    match mode {
        GenieMode::Regression => "regression",
        GenieMode::Ranking => "ranking",
    }
}

/// Scores `model` on the held-out (metric, percent) pairs of the store's
/// meta-dataset split with `seed`.
pub fn genie_eval(store: &RunStore, model: &GenieModel<f64>, seed: u64) -> Result<GenieReport> {
    let (examples, split) = meta_split(store, seed)?;
    let test = evaluate_genie(model, &split.train, &split.test)?;
    let train_scores: Vec<f64> = split.train.iter().map(|e| model.predict(e)).collect();
    Ok(GenieReport {
        mode: model.mode,
        seed,
        examples,
        train_examples: split.train.len(),
        validation_examples: split.validation.len(),
        test_examples: split.test.len(),
        test,
        train_p_at_1: p_at_1(&split.train, &train_scores)?,
    })
}

/// Builds the meta-dataset from the store, trains a genie, evaluates it on
/// the held-out (metric, percent) pairs, and writes the model and report.
pub fn genie_train(
    store: &RunStore,
    mode: GenieMode,
    config: &GenieConfig,
    seed: u64,
) -> Result<(GenieModel<f64>, GenieReport)> {
    let (_, split) = meta_split(store, seed)?;
    let model = train_genie::<f64>(&split.train, &split.validation, mode, config, seed)?;
    let report = genie_eval(store, &model, seed)?;
    let name = mode_name(mode);
    store.write_file(
        &format!("genie/model_{name}.json"),
        &serde_json::to_string(&model)?,
    )?;
    store.write_file(
        &format!("reports/genie_{name}.csv"),
        &genie_report_text(&report),
    )?;
    Ok((model, report))
}

pub fn load_genie(path: &Path) -> Result<GenieModel<f64>> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&body)?)
}

pub struct PredictRequest<'a> {
    pub train: &'a Dataset,
    pub scenario: Scenario,
    pub metric: Metric,
    pub percent: f64,
    pub samplers: &'a [String],
    pub seed: u64,
    pub featurize: FeaturizeConfig,
    pub proxy: ProxyConfig,
}

/// Ranks candidate samplers for a new dataset; failures are listed apart.
pub fn genie_predict(
    model: &GenieModel<f64>,
    req: &PredictRequest<'_>,
) -> Result<crate::genie::Ranking> {
    let specs: Vec<SamplerSpec> = req
        .samplers
        .iter()
        .map(|s| SamplerSpec::parse(s, req.percent, req.seed))
        .collect::<Result<_>>()?;
    let ctx = RankContext {
        train: req.train,
        scenario: req.scenario,
        metric: req.metric,
        featurize: &req.featurize,
        proxy: &req.proxy,
    };
    rank_samplers(model, ctx, &specs)
}

pub fn ranked_csv(ranked: &[RankedSampler]) -> String {
    let mut s = String::from("rank,sampler,tau_hat,relative_only\n");
    for (k, r) in ranked.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{:.6},{}",
            k + 1,
            r.sampler,
            r.tau_hat,
            r.relative_only
        );
    }
    s
}
