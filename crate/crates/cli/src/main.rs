//! `recsample`: sampling, benchmarking and sampler selection over a
//! persistent run-store.
//!
//! Exit codes: 0 on success, 1 when any job (or the command) failed, 2 on
//! usage errors.

mod settings;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use recsample::dataset::{
    load_dataset, preprocess, read_raw, split, Dataset, DatasetManifest, Format, Scenario,
};
use recsample::featurizer::{featurize, FeaturizeConfig};
use recsample::genie::{GenieConfig, GenieMode};
use recsample::pipeline::{
    genie_eval, genie_predict, genie_report_text, genie_train, load_genie, mode_name, ranked_csv,
    run_benchmark, sampler_seed, split_seed, write_reports, PredictRequest,
};
use recsample::recommenders::Metric;
use recsample::samplers::{SamplerSpec, ROSTER};
use recsample::store::RunStore;
use recsample::svp::{draw_any, ProxyConfig};

use settings::Settings;

/// Marks an error as a usage error (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser, Debug)]
#[command(
    name = "recsample",
    version,
    about = "Sub-sample recommendation datasets and benchmark how well samples preserve algorithm rankings"
)]
struct Cli {
    /// Run-store root directory.
    #[arg(long, global = true, env = "RECSAMPLE_STORE")]
    store: Option<PathBuf>,
    /// Key-value config file; command-line flags take precedence over it.
    #[arg(long, global = true, env = "RECSAMPLE_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More logging (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Preprocess an interaction file and register it in the store.
    Ingest(IngestArgs),
    /// Draw one sample of a dataset's train split.
    Sample(SampleArgs),
    /// Run the sampler × percent × algorithm grid and compute Ψ.
    Benchmark(BenchmarkArgs),
    /// Recompute taus and the Ψ table from the store.
    Psi,
    /// Print the 53-dimensional embedding of a dataset.
    Featurize(FeaturizeArgs),
    /// Train, evaluate or query the sampler-selection model.
    #[command(subcommand)]
    Genie(GenieCommand),
    /// Regenerate every report under `<store>/reports`.
    Report,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Interaction file: user,item,rating,timestamp with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Name to register; defaults to the file stem.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value_t = 3)]
    min_interactions: usize,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Ingested dataset name or path to an interaction file.
    #[arg(long)]
    data: String,
    #[arg(long, value_parser = sampler_name)]
    sampler: String,
    /// Percent of the train split to keep, in (0, 100].
    #[arg(long = "p", value_parser = percent)]
    p: f64,
    #[arg(long, default_value = "implicit")]
    scenario: Scenario,
    /// Sampler hyperparameter, e.g. `--hyper burn_probability=0.7`.
    #[arg(long, value_parser = key_value)]
    hyper: Vec<(String, f64)>,
    /// Output directory; defaults to `<store>/samples`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Dataset names or paths, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    data: Vec<String>,
    #[arg(long, value_delimiter = ',', value_parser = sampler_name)]
    samplers: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', value_parser = percent)]
    percents: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    scenarios: Option<Vec<Scenario>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Also embed every train set and sample (needed by `genie train`).
    #[arg(long)]
    featurize: bool,
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    #[arg(long)]
    data: String,
    /// Embed this scenario's train split instead of the whole dataset.
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum GenieCommand {
    /// Fit on the store's taus and embeddings; writes the model and a P@1 report.
    Train(GenieTrainArgs),
    /// Re-score a stored model on its held-out split.
    Eval(GenieModelArgs),
    /// Rank candidate samplers for a new dataset.
    Predict(GeniePredictArgs),
}

#[derive(Args, Debug)]
struct GenieTrainArgs {
    #[arg(long, default_value = "regression")]
    mode: GenieMode,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args, Debug)]
struct GenieModelArgs {
    #[arg(long, default_value = "regression")]
    mode: GenieMode,
    /// Model file; defaults to `<store>/genie/model_<mode>.json`.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GeniePredictArgs {
    #[command(flatten)]
    model: GenieModelArgs,
    #[arg(long)]
    data: String,
    #[arg(long = "p", value_parser = percent)]
    p: f64,
    #[arg(long)]
    metric: Metric,
    /// Defaults to explicit for mse, implicit otherwise.
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long, value_delimiter = ',', value_parser = sampler_name)]
    samplers: Option<Vec<String>>,
    /// Write the ranked CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn sampler_name(s: &str) -> Result<String, String> {
    if ROSTER.contains(&s) {
        Ok(s.to_string())
    } else {
        Err(format!(
            "unknown sampler '{s}'; expected one of: {}",
            ROSTER.join(", ")
        ))
    }
}

fn percent(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if p > 0.0 && p <= 100.0 {
        Ok(p)
    } else {
        Err(format!("sampling percent must lie in (0, 100], got {s}"))
    }
}

fn key_value(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    Ok((
        k.trim().to_string(),
        v.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

/// Resolved global options: flags, then config, then defaults.
struct Ctx {
    store: RunStore,
    seed: u64,
    jobs: usize,
    settings: Settings,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let settings = match &cli.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let root = match &cli.store {
            Some(p) => p.clone(),
            None => settings
                .get::<PathBuf>("store")?
                .unwrap_or_else(|| PathBuf::from("runs")),
        };
        let seed = match cli.seed {
            Some(s) => s,
            None => settings.get("seed")?.unwrap_or(0),
        };
        let jobs = match cli.jobs {
            Some(j) => j,
            None => settings.get("jobs")?.unwrap_or(1),
        };
        Ok(Ctx {
            store: RunStore::open(root)?,
            seed,
            jobs,
            settings,
        })
    }

    /// A path to an interaction file, or the name of an ingested dataset.
    fn dataset(&self, data: &str) -> Result<Dataset> {
        let path = Path::new(data);
        if path.is_file() {
            return Ok(load_dataset(path, Format::from_path(path))?);
        }
        let manifest = self
            .store
            .root()
            .join("datasets")
            .join(data)
            .join("manifest.json");
        if !manifest.is_file() {
            bail!(Usage(format!(
                "'{data}' is neither a file nor an ingested dataset (run `recsample ingest` first)"
            )));
        }
        Ok(DatasetManifest::read(&manifest)?.load()?)
    }

    fn featurize_config(&self) -> FeaturizeConfig {
        FeaturizeConfig {
            seed: self.seed,
            ..Default::default()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    if e.downcast_ref::<Usage>().is_some() {
        return true;
    }
    matches!(
        e.downcast_ref::<recsample::Error>(),
        Some(recsample::Error::InvalidPercent(_) | recsample::Error::InvalidSpec { .. })
    )
}

fn run(cli: Cli) -> Result<ExitCode> {
    let ctx = Ctx::new(&cli)?;
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::Benchmark(a) => benchmark(&ctx, a),
        Command::Psi => {
            write_reports(&ctx.store)?;
            print!(
                "{}",
                std::fs::read_to_string(ctx.store.root().join("reports/psi.csv"))?
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Featurize(a) => featurize_cmd(&ctx, a),
        Command::Genie(g) => genie(&ctx, g),
        Command::Report => {
            write_reports(&ctx.store)?;
            let dir = ctx.store.root().join("reports");
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            files.sort();
            for f in files {
                println!("{}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<ExitCode> {
    let raw = read_raw(&a.data, Format::from_path(&a.data))?;
    let name = a.name.unwrap_or_else(|| raw.name().to_string());
    let ds = preprocess(&raw, a.min_interactions)?.with_name(name.clone());
    let dir = ctx.store.root().join("datasets").join(&name);
    let m = DatasetManifest::write(&ds, &dir)?;
    println!(
        "{name}: {} users, {} items, {} interactions",
        m.num_users, m.num_items, m.num_interactions
    );
    Ok(ExitCode::SUCCESS)
}

fn sample(ctx: &Ctx, a: SampleArgs) -> Result<ExitCode> {
    let ds = ctx.dataset(&a.data)?;
    let name = ds.name().to_string();
    let s = split(&ds, a.scenario, split_seed(ctx.seed, &name))?;
    let mut spec = SamplerSpec::parse(&a.sampler, a.p, sampler_seed(ctx.seed, &name, a.scenario))?;
    for (k, v) in &a.hyper {
        spec = spec.with_hyperparameter(k, *v);
    }
    let proxy = ctx.settings.benchmark()?.proxy;
    let started = Instant::now();
    let r = draw_any::<f64>(&s.train, a.scenario, &spec, &proxy)?;
    let elapsed = started.elapsed().as_secs_f64() * 1000.0;
    let out = a.out.unwrap_or_else(|| ctx.store.root().join("samples"));
    let stem = format!("{name}_{}_{}_{}_{}", a.scenario, a.sampler, a.p, ctx.seed);
    r.write(&out, &stem, s.train.len(), elapsed)?;
    println!("actual_count {}", r.actual_count);
    println!("target_count {}", r.target_count);
    println!("train_count {}", s.train.len());
    println!("path {}", out.join(format!("{stem}.csv")).display());
    Ok(ExitCode::SUCCESS)
}

fn benchmark(ctx: &Ctx, a: BenchmarkArgs) -> Result<ExitCode> {
    let mut config = ctx.settings.benchmark()?;
    if let Some(v) = a.samplers {
        config.samplers = v;
    }
    if let Some(v) = a.percents {
        config.percents = v;
    }
    if let Some(v) = a.scenarios {
        config.scenarios = v;
    }
    if let Some(v) = a.seeds {
        config.seeds = v;
    } else if ctx.settings.get::<String>("seeds")?.is_none() {
        config.seeds = vec![ctx.seed];
    }
    if a.featurize {
        config.featurize = Some(ctx.featurize_config());
    } else if let Some(f) = config.featurize.as_mut() {
        f.seed = ctx.seed;
    }
    config.jobs = ctx.jobs;
    config.validate().map_err(|e| Usage(e.to_string()))?;
    let datasets: Vec<Dataset> = a
        .data
        .iter()
        .map(|d| ctx.dataset(d))
        .collect::<Result<_>>()?;
    let outcome = run_benchmark(&ctx.store, &datasets, &config)?;
    eprintln!(
        "planned {} jobs: {} already done, {} completed, {} failed",
        outcome.planned,
        outcome.skipped,
        outcome.completed,
        outcome.failed.len()
    );
    for (key, err) in &outcome.failed {
        eprintln!("failed {key}: {err}");
    }
    print!(
        "{}",
        std::fs::read_to_string(ctx.store.root().join("reports/psi.csv"))?
    );
    Ok(if outcome.failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn featurize_cmd(ctx: &Ctx, a: FeaturizeArgs) -> Result<ExitCode> {
    let ds = ctx.dataset(&a.data)?;
    let target = match a.scenario {
        Some(f) => split(&ds, f, split_seed(ctx.seed, ds.name()))?.train,
        None => ds,
    };
    let e = featurize::<f64>(&target, &ctx.featurize_config())?;
    let body = serde_json::to_string_pretty(&e)?;
    match a.out {
        Some(p) => std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{body}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn model_path(ctx: &Ctx, a: &GenieModelArgs) -> PathBuf {
    a.model.clone().unwrap_or_else(|| {
        ctx.store
            .root()
            .join(format!("genie/model_{}.json", mode_name(a.mode)))
    })
}

fn genie(ctx: &Ctx, cmd: GenieCommand) -> Result<ExitCode> {
    match cmd {
        GenieCommand::Train(a) => {
            let mut config = GenieConfig::default();
            if let Some(v) = ctx.settings.get("genie.learning_rate")? {
                config.learning_rate = v;
            }
            if let Some(v) = a.max_steps.or(ctx.settings.get("genie.max_steps")?) {
                config.max_steps = v;
            }
            let (_, report) = genie_train(&ctx.store, a.mode, &config, ctx.seed)?;
            print!("{}", genie_report_text(&report));
        }
        GenieCommand::Eval(a) => {
            let path = model_path(ctx, &a);
            let model = load_genie(&path)
                .with_context(|| format!("no usable genie model at {}", path.display()))?;
            print!(
                "{}",
                genie_report_text(&genie_eval(&ctx.store, &model, ctx.seed)?)
            );
        }
        GenieCommand::Predict(a) => {
            let path = model_path(ctx, &a.model);
            let model = load_genie(&path)
                .with_context(|| format!("no usable genie model at {}", path.display()))?;
            let ds = ctx.dataset(&a.data)?;
            let scenario = a.scenario.unwrap_or(if a.metric == Metric::Mse {
                Scenario::Explicit
            } else {
                Scenario::Implicit
            });
            let s = split(&ds, scenario, split_seed(ctx.seed, ds.name()))?;
            let samplers = match a.samplers {
                Some(v) => v,
                None => ROSTER.iter().map(|s| s.to_string()).collect(),
            };
            let proxy: ProxyConfig = ctx.settings.benchmark()?.proxy;
            let req = PredictRequest {
                train: &s.train,
                scenario,
                metric: a.metric,
                percent: a.p,
                samplers: &samplers,
                seed: sampler_seed(ctx.seed, ds.name(), scenario),
                featurize: ctx.featurize_config(),
                proxy,
            };
            let (ranked, failed) = genie_predict(&model, &req)?;
            for (name, err) in &failed {
                eprintln!("excluded {name}: {err}");
            }
            let body = ranked_csv(&ranked);
            match a.out {
                Some(p) => {
                    std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?
                }
                None => print!("{body}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
