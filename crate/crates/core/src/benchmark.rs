//! Ranking preservation: how well does training on a sample reproduce the
//! algorithm ordering obtained on the full data?

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Scenario;
use crate::error::{Error, Result};
use crate::recommenders::{pertinent_algorithms, pertinent_metrics, Algorithm, Metric};

/// Sampler label of the reference runs on the unsampled train set.
pub const FULL: &str = "FULL";

/// Tau-b over paired observations, Knight's O(n log n) algorithm.
pub fn tau_b<T: PartialOrd + Copy>(x: &[T], y: &[T]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ElementMismatch(format!(
            "{} vs {} observations",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as i64;
    let n0 = n * (n - 1) / 2;
    let cmp = |a: &T, b: &T| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal);
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| cmp(&x[a], &x[b]).then(cmp(&y[a], &y[b])));

    let (mut n1, mut n3) = (0i64, 0i64);
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && cmp(&x[idx[end]], &x[idx[start]]).is_eq() {
            end += 1;
        }
        let t = (end - start) as i64;
        n1 += t * (t - 1) / 2;
        let mut s = start;
        while s < end {
            let mut e = s + 1;
            while e < end && cmp(&y[idx[e]], &y[idx[s]]).is_eq() {
                e += 1;
            }
            let u = (e - s) as i64;
            n3 += u * (u - 1) / 2;
            s = e;
        }
        start = end;
    }

    let mut ys: Vec<T> = idx.iter().map(|&k| y[k]).collect();
    let mut buf = ys.clone();
    let swaps = merge_count(&mut ys, &mut buf, &cmp);

    let mut n2 = 0i64;
    let mut start = 0;
    while start < ys.len() {
        let mut end = start + 1;
        while end < ys.len() && cmp(&ys[end], &ys[start]).is_eq() {
            end += 1;
        }
        let t = (end - start) as i64;
        n2 += t * (t - 1) / 2;
        start = end;
    }
    Ok(tau_from_counts(n0 - n1 - n2 + n3 - 2 * swaps, n0, n1, n2))
}

/// Shared final step so that different counting strategies agree bit for bit.
/// Two fully tied sides are the same weak order (1); one fully tied side
/// leaves the statistic undefined (0).
pub fn tau_from_counts(concordant_minus_discordant: i64, n0: i64, ties_x: i64, ties_y: i64) -> f64 {
    if n0 == ties_x && n0 == ties_y {
        return 1.0;
    }
    let denom = ((n0 - ties_x) * (n0 - ties_y)) as f64;
    if denom == 0.0 {
        return 0.0;
    }
    concordant_minus_discordant as f64 / denom.sqrt()
}

fn merge_count<T: Copy>(
    v: &mut [T],
    buf: &mut [T],
    cmp: &impl Fn(&T, &T) -> std::cmp::Ordering,
) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid], cmp)
        + merge_count(&mut v[mid..], &mut buf[mid..], cmp);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if cmp(&v[j], &v[i]).is_lt() {
            buf[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k2 = k + mid - i;
    buf[k2..n].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Tau between two rankings given as rank positions per element (ties
/// share a position). Both sides must rank the same elements.
pub fn kendall_tau_ranks<K: Ord + std::fmt::Debug>(
    a: &BTreeMap<K, usize>,
    b: &BTreeMap<K, usize>,
) -> Result<f64> {
    if !a.keys().eq(b.keys()) {
        return Err(Error::ElementMismatch(format!(
            "{:?} vs {:?}",
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>()
        )));
    }
    let x: Vec<usize> = a.values().copied().collect();
    let y: Vec<usize> = b.values().copied().collect();
    tau_b(&x, &y)
}

/// Tau between two strict orderings (first element = best).
pub fn kendall_tau<K: Ord + Clone + std::fmt::Debug>(a: &[K], b: &[K]) -> Result<f64> {
    let pos = |r: &[K]| -> Result<BTreeMap<K, usize>> {
        let m: BTreeMap<K, usize> = r.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        if m.len() != r.len() {
            return Err(Error::ElementMismatch(
                "duplicate element in ranking".into(),
            ));
        }
        Ok(m)
    };
    kendall_tau_ranks(&pos(a)?, &pos(b)?)
}

/// One metric value of one trained model, as stored in the run-store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub dataset: String,
    pub scenario: Scenario,
    pub sampler: String,
    pub percent: f64,
    pub algorithm: Algorithm,
    pub metric: Metric,
    pub value: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub dataset: String,
    pub scenario: Scenario,
    pub metric: Metric,
    pub sampler: String,
    pub percent: f64,
    /// Best first; ties broken by algorithm name.
    pub order: Vec<Algorithm>,
    pub values: BTreeMap<Algorithm, f64>,
}

impl RankingRecord {
    pub fn new(
        dataset: &str,
        scenario: Scenario,
        metric: Metric,
        sampler: &str,
        percent: f64,
        values: BTreeMap<Algorithm, f64>,
    ) -> Self {
        let mut order: Vec<Algorithm> = values.keys().copied().collect();
        order.sort_by(|a, b| {
            let (va, vb) = (values[a], values[b]);
            let c = if metric.lower_is_better() {
                va.total_cmp(&vb)
            } else {
                vb.total_cmp(&va)
            };
            c.then_with(|| a.as_str().cmp(b.as_str()))
        });
        RankingRecord {
            dataset: dataset.to_string(),
            scenario,
            metric,
            sampler: sampler.to_string(),
            percent,
            order,
            values,
        }
    }

    /// Competition ranks: 1 + number of strictly better algorithms.
    pub fn tied_ranks(&self) -> BTreeMap<Algorithm, usize> {
        self.values
            .iter()
            .map(|(&a, &v)| {
                let better = self
                    .values
                    .values()
                    .filter(|&&w| {
                        if self.metric.lower_is_better() {
                            w < v
                        } else {
                            w > v
                        }
                    })
                    .count();
                (a, better + 1)
            })
            .collect()
    }

    /// Ordinal position (1-based) of each algorithm.
    pub fn positions(&self) -> BTreeMap<Algorithm, usize> {
        self.order
            .iter()
            .enumerate()
            .map(|(k, &a)| (a, k + 1))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauRecord {
    pub dataset: String,
    pub scenario: Scenario,
    pub metric: Metric,
    pub sampler: String,
    pub percent: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiSummary {
    pub dataset: String,
    pub sampler: String,
    pub psi: f64,
    /// Cells (scenario, metric, percent) that contributed.
    pub cells: usize,
    pub expected_cells: usize,
    /// Expected cells without a complete sampled ranking.
    pub missing: Vec<String>,
    pub taus: Vec<TauRecord>,
}

type CellKey = (String, Scenario, Metric, String, u64);

fn percent_key(p: f64) -> u64 {
    (p * 1000.0).round() as u64
}

/// Groups metric records into rankings keyed by
/// (dataset, scenario, metric, sampler, percent). An algorithm's value is
/// the mean over seeds; a repeated (seed, algorithm) record keeps the last.
pub fn rankings(records: &[MetricRecord]) -> BTreeMap<CellKey, RankingRecord> {
    type Values = BTreeMap<Algorithm, BTreeMap<u64, f64>>;
    let mut grouped: BTreeMap<CellKey, (f64, Values)> = BTreeMap::new();
    for r in records {
        let key = (
            r.dataset.clone(),
            r.scenario,
            r.metric,
            r.sampler.clone(),
            percent_key(r.percent),
        );
        grouped
            .entry(key)
            .or_insert_with(|| (r.percent, BTreeMap::new()))
            .1
            .entry(r.algorithm)
            .or_default()
            .insert(r.seed, r.value);
    }
    grouped
        .into_iter()
        .map(|(k, (p, values))| {
            let means = values
                .into_iter()
                .map(|(a, by_seed)| (a, by_seed.values().sum::<f64>() / by_seed.len() as f64))
                .collect();
            let rec = RankingRecord::new(&k.0, k.1, k.2, &k.3, p, means);
            (k, rec)
        })
        .collect()
}

fn complete(r: &RankingRecord) -> bool {
    let want = pertinent_algorithms(r.scenario);
    want.len() == r.values.len() && want.iter().all(|a| r.values.contains_key(a))
}

/// Tau of every sampled cell that has a complete full-data reference.
pub fn tau_records(records: &[MetricRecord]) -> Result<Vec<TauRecord>> {
    let ranks = rankings(records);
    let mut out = Vec::new();
    for ((ds, f, m, s, _), r) in &ranks {
        if s == FULL || !complete(r) {
            continue;
        }
        let Some(full) = ranks.get(&(ds.clone(), *f, *m, FULL.to_string(), percent_key(100.0)))
        else {
            continue;
        };
        if !complete(full) {
            continue;
        }
        out.push(TauRecord {
            dataset: ds.clone(),
            scenario: *f,
            metric: *m,
            sampler: s.clone(),
            percent: r.percent,
            tau: kendall_tau_ranks(&full.tied_ranks(), &r.tied_ranks())?,
        });
    }
    Ok(out)
}

/// Ψ(D, s): the mean tau over the (scenario, metric, percent) cells present.
/// Cells are expected for every scenario with full-data results and every
/// percent the sampler was run at on this dataset.
pub fn compute_psi(records: &[MetricRecord], dataset: &str, sampler: &str) -> Result<PsiSummary> {
    let mine: Vec<MetricRecord> = records
        .iter()
        .filter(|r| r.dataset == dataset && (r.sampler == sampler || r.sampler == FULL))
        .cloned()
        .collect();
    let taus: Vec<TauRecord> = tau_records(&mine)?
        .into_iter()
        .filter(|t| t.sampler == sampler)
        .collect();
    let scenarios: BTreeSet<Scenario> = mine
        .iter()
        .filter(|r| r.sampler == FULL)
        .map(|r| r.scenario)
        .collect();
    let percents: BTreeMap<u64, f64> = mine
        .iter()
        .filter(|r| r.sampler == sampler)
        .map(|r| (percent_key(r.percent), r.percent))
        .collect();
    let mut missing = Vec::new();
    let mut expected = 0;
    for &f in &scenarios {
        for m in pertinent_metrics(f) {
            for (&pk, &p) in &percents {
                expected += 1;
                let found = taus
                    .iter()
                    .any(|t| t.scenario == f && t.metric == m && percent_key(t.percent) == pk);
                if !found {
                    missing.push(format!("{f}/{m}/{p}"));
                }
            }
        }
    }
    if taus.is_empty() {
        return Err(Error::EmptyCells(format!("{dataset}/{sampler}")));
    }
    let psi = taus.iter().map(|t| t.tau).sum::<f64>() / taus.len() as f64;
    Ok(PsiSummary {
        dataset: dataset.to_string(),
        sampler: sampler.to_string(),
        psi,
        cells: taus.len(),
        expected_cells: expected,
        missing,
        taus,
    })
}

/// Ψ for every (dataset, sampler) pair present, sorted.
pub fn compute_all_psi(records: &[MetricRecord]) -> Vec<PsiSummary> {
    let pairs: BTreeSet<(String, String)> = records
        .iter()
        .filter(|r| r.sampler != FULL)
        .map(|r| (r.dataset.clone(), r.sampler.clone()))
        .collect();
    pairs
        .into_iter()
        .filter_map(|(d, s)| match compute_psi(records, &d, &s) {
            Ok(p) => Some(p),
            Err(e) => {
                log::warn!("no Ψ for {d}/{s}: {e}");
                None
            }
        })
        .collect()
}

/// Samplers as rows, datasets as columns, plus the row average.
pub fn psi_table_csv(summaries: &[PsiSummary]) -> String {
    let datasets: BTreeSet<&str> = summaries.iter().map(|s| s.dataset.as_str()).collect();
    let samplers: BTreeSet<&str> = summaries.iter().map(|s| s.sampler.as_str()).collect();
    let mut out = String::from("sampler");
    for d in &datasets {
        let _ = write!(out, ",{d}");
    }
    out.push_str(",average\n");
    for s in &samplers {
        out.push_str(s);
        let mut vals = Vec::new();
        for d in &datasets {
            match summaries
                .iter()
                .find(|x| x.sampler == *s && x.dataset == *d)
            {
                Some(x) => {
                    vals.push(x.psi);
                    let _ = write!(out, ",{:.6}", x.psi);
                }
                None => out.push(','),
            }
        }
        if vals.is_empty() {
            out.push_str(",\n");
        } else {
            let _ = writeln!(out, ",{:.6}", vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    out
}

pub fn psi_coverage_csv(summaries: &[PsiSummary]) -> String {
    let mut out = String::from("dataset,sampler,psi,cells,expected_cells,missing\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{:.6},{},{},{}",
            s.dataset,
            s.sampler,
            s.psi,
            s.cells,
            s.expected_cells,
            s.missing.join(";")
        );
    }
    out
}

/// P_MLE(r | f, p): probability-like score of each algorithm moving up in
/// the ranking after sampling, averaged over datasets, samplers and metrics.
pub fn p_mle_heatmap(
    records: &[MetricRecord],
    scenario: Scenario,
    percent: f64,
) -> Result<BTreeMap<Algorithm, f64>> {
    let ranks = rankings(records);
    let mut sums: BTreeMap<Algorithm, (f64, usize)> = BTreeMap::new();
    for ((ds, f, m, s, pk), r) in &ranks {
        if *f != scenario || s == FULL || *pk != percent_key(percent) || !complete(r) {
            continue;
        }
        let Some(full) = ranks.get(&(ds.clone(), *f, *m, FULL.to_string(), percent_key(100.0)))
        else {
            continue;
        };
        if !complete(full) {
            continue;
        }
        let n = r.order.len();
        if n < 2 {
            continue;
        }
        let (rf, rs) = (full.positions(), r.positions());
        for (a, &pf) in &rf {
            let moved = pf as f64 - rs[a] as f64;
            let e = sums.entry(*a).or_insert((0.0, 0));
            e.0 += 0.5 + moved / (2.0 * (n as f64 - 1.0));
            e.1 += 1;
        }
    }
    if sums.is_empty() {
        return Err(Error::EmptyCells(format!("{scenario} at {percent}%")));
    }
    Ok(sums
        .into_iter()
        .map(|(a, (s, c))| (a, s / c as f64))
        .collect())
}

/// Rows `scenario,percent,algorithm,p_mle` for every scenario and percent
/// with data, in a fixed order.
pub fn p_mle_rows(records: &[MetricRecord]) -> Vec<(Scenario, f64, Algorithm, f64)> {
    let mut percents: Vec<f64> = records
        .iter()
        .filter(|r| r.sampler != FULL)
        .map(|r| r.percent)
        .collect();
    percents.sort_by(|a, b| b.total_cmp(a));
    percents.dedup();
    let mut rows = Vec::new();
    for f in Scenario::ALL {
        for &p in &percents {
            if let Ok(map) = p_mle_heatmap(records, f, p) {
                rows.extend(map.into_iter().map(|(a, v)| (f, p, a, v)));
            }
        }
    }
    rows
}

pub fn p_mle_csv(rows: &[(Scenario, f64, Algorithm, f64)]) -> String {
    let mut out = String::from("scenario,percent,algorithm,p_mle\n");
    for (f, p, a, v) in rows {
        let _ = writeln!(out, "{f},{p},{a},{v:.6}");
    }
    out
}

/// One heatmap panel per scenario: algorithms down, percents across,
/// blue below 0.5 and red above.
pub fn p_mle_svg(rows: &[(Scenario, f64, Algorithm, f64)]) -> String {
    const CELL: f64 = 44.0;
    const LEFT: f64 = 90.0;
    const TOP: f64 = 40.0;
    let mut percents: Vec<f64> = rows.iter().map(|r| r.1).collect();
    percents.sort_by(|a, b| b.total_cmp(a));
    percents.dedup();
    let scenarios: Vec<Scenario> = Scenario::ALL
        .into_iter()
        .filter(|f| rows.iter().any(|r| r.0 == *f))
        .collect();
    let panel_h = TOP + CELL * Algorithm::ALL.len() as f64 + 20.0;
    let width = LEFT + CELL * percents.len() as f64 + 20.0;
    let height = panel_h * scenarios.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    for (k, f) in scenarios.iter().enumerate() {
        let y0 = k as f64 * panel_h;
        let _ = writeln!(
            s,
            r#"<text x="4" y="{}" font-weight="bold">{f}</text>"#,
            y0 + 14.0
        );
        for (j, p) in percents.iter().enumerate() {
            let x = LEFT + j as f64 * CELL;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{p}%</text>"#,
                x + CELL / 2.0,
                y0 + TOP - 6.0
            );
        }
        for (i, a) in Algorithm::ALL.iter().enumerate() {
            let y = y0 + TOP + i as f64 * CELL;
            let _ = writeln!(s, r#"<text x="4" y="{}">{a}</text>"#, y + CELL / 2.0 + 4.0);
            for (j, p) in percents.iter().enumerate() {
                let Some(v) = rows
                    .iter()
                    .find(|r| r.0 == *f && r.1 == *p && r.2 == *a)
                    .map(|r| r.3)
                else {
                    continue;
                };
                let x = LEFT + j as f64 * CELL;
                let t = ((v - 0.5) * 2.0).clamp(-1.0, 1.0);
                let (r, g, b) = if t >= 0.0 {
                    (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
                } else {
                    (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
                };
                let _ = writeln!(
                    s,
                    r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({},{},{})" stroke="white"/>"#,
                    r as u8, g as u8, b as u8
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle">{v:.2}</text>"#,
                    x + CELL / 2.0,
                    y + CELL / 2.0 + 4.0
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
