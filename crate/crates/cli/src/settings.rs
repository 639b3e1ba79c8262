//! `key = value` config files. Blank lines and `#` comments are ignored;
//! list values are comma separated.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};

use recsample::dataset::Scenario;
use recsample::pipeline::{BenchmarkConfig, GridOverride};
use recsample::recommenders::{Algorithm, HyperGrid};

use crate::Usage;

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&body)
    }

    pub fn parse(body: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in body.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Usage(format!("config line {}: expected key = value", n + 1)))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Settings { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Usage(format!("config key {key}: {e}")).into())
            })
            .transpose()
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| parse_list(v).map_err(|e| anyhow!(Usage(format!("config key {key}: {e}")))))
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Reads `grid.<algorithm>[.<scenario>].<field>` keys on top of the
    /// default grid.
    pub fn grids(&self) -> Result<Vec<GridOverride>> {
        let mut targets: BTreeMap<(Algorithm, Option<Scenario>), HyperGrid> = BTreeMap::new();
        for key in self.keys().filter(|k| k.starts_with("grid.")) {
            let parts: Vec<&str> = key.split('.').collect();
            let (alg, scenario) = match parts.len() {
                3 => (parts[1], None),
                4 => (parts[1], Some(parts[2])),
                _ => {
                    return Err(Usage(format!(
                        "config key {key}: expected grid.<algorithm>[.<scenario>].<field>"
                    ))
                    .into())
                }
            };
            let alg: Algorithm = alg
                .parse()
                .map_err(|e| Usage(format!("config key {key}: {e}")))?;
            let scenario = scenario
                .map(|s| {
                    s.parse::<Scenario>()
                        .map_err(|e| Usage(format!("config key {key}: {e}")))
                })
                .transpose()?;
            targets.entry((alg, scenario)).or_default();
        }
        let mut out = Vec::new();
        for ((alg, scenario), mut grid) in targets {
            let prefix = match scenario {
                Some(s) => format!("grid.{alg}.{s}."),
                None => format!("grid.{alg}."),
            };
            for (key, value) in self
                .values
                .iter()
                .filter(|(k, _)| k.starts_with(&prefix) && k[prefix.len()..].find('.').is_none())
            {
                let field = &key[prefix.len()..];
                let bad = |e: String| Usage(format!("config key {key}: {e}"));
                match field {
                    "dims" => grid.dims = parse_list(value).map_err(bad)?,
                    "dropouts" => grid.dropouts = parse_list(value).map_err(bad)?,
                    "learning_rates" => grid.learning_rates = parse_list(value).map_err(bad)?,
                    "l2" => grid.l2 = value.parse().map_err(|e| bad(format!("{e}")))?,
                    "max_epochs" => {
                        grid.max_epochs = value.parse().map_err(|e| bad(format!("{e}")))?
                    }
                    "patience" => grid.patience = value.parse().map_err(|e| bad(format!("{e}")))?,
                    other => return Err(bad(format!("unknown grid field '{other}'")).into()),
                }
            }
            out.push(GridOverride {
                algorithm: alg,
                scenario,
                grid,
            });
        }
        Ok(out)
    }

    /// Benchmark configuration from config keys; flags are applied later.
    pub fn benchmark(&self) -> Result<BenchmarkConfig> {
        let mut c = BenchmarkConfig::default();
        if let Some(v) = self.list("samplers")? {
            c.samplers = v;
        }
        if let Some(v) = self.list("percents")? {
            c.percents = v;
        }
        if let Some(v) = self.list("scenarios")? {
            c.scenarios = v;
        }
        if let Some(v) = self.list("seeds")? {
            c.seeds = v;
        }
        if let Some(v) = self.get("proxy.epochs")? {
            c.proxy.epochs = v;
        }
        if let Some(v) = self.get("proxy.learning_rate")? {
            c.proxy.learning_rate = v;
        }
        if let Some(v) = self.get("proxy.dim")? {
            c.proxy.dim = v;
        }
        if let Some(v) = self.get("proxy.negatives_per_positive")? {
            c.proxy.negatives_per_positive = v;
        }
        if self.get::<bool>("featurize")?.unwrap_or(false) {
            c.featurize = Some(Default::default());
        }
        c.grids = self.grids()?;
        Ok(c)
    }
}

pub fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("'{s}': {e}")))
        .collect()
}
