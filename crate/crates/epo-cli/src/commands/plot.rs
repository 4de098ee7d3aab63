//! The `plot` subcommand: aggregates metrics across runs (mean plus min-max
//! band per step), writes the aggregate as CSV, and renders SVG charts for
//! rewards, success rates, and entropy diagnostics.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use epo_core::trainer::MetricsRecord;

use crate::svg::{line_chart, Series, PALETTE};

type Extractor = fn(&MetricsRecord) -> Option<f64>;

/// Metrics that can be aggregated, with their extractors.
const METRICS: [(&str, Extractor); 6] = [
    ("train_mean_reward", |m| Some(m.train_mean_reward)),
    ("iid_success", |m| m.iid_success),
    ("ood_success", |m| m.ood_success),
    ("batch_mean_entropy", |m| Some(m.batch_mean_entropy)),
    ("early_token_entropy", |m| Some(m.early_token_entropy)),
    ("late_token_entropy", |m| Some(m.late_token_entropy)),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AggRow {
    pub step: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

/// Finds every metrics.jsonl under the given run directories: either the
/// directory itself holds one, or its seed_* children do.
pub fn discover_metrics_files(run_dirs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for dir in run_dirs {
        let direct = dir.join("metrics.jsonl");
        if direct.is_file() {
            files.push(direct);
            continue;
        }
        let mut children: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("cannot list {}", dir.display()))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir() && p.join("metrics.jsonl").is_file())
            .map(|p| p.join("metrics.jsonl"))
            .collect();
        children.sort();
        if children.is_empty() {
            bail!("no metrics.jsonl found under {}", dir.display());
        }
        files.extend(children);
    }
    Ok(files)
}

pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: MetricsRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: bad metrics line", path.display(), i + 1))?;
        records.push(record);
    }
    if records.is_empty() {
        bail!("{} holds no metric records", path.display());
    }
    Ok(records)
}

/// Trailing mean over the last `window` entries of each point's prefix.
fn smooth_series(points: &[(usize, f64)], window: usize) -> Vec<(usize, f64)> {
    points
        .iter()
        .enumerate()
        .map(|(i, &(k, _))| {
            let start = (i + 1).saturating_sub(window);
            let slice = &points[start..=i];
            let mean = slice.iter().map(|&(_, v)| v).sum::<f64>() / slice.len() as f64;
            (k, mean)
        })
        .collect()
}

/// Aggregates one metric across runs on the intersection of their step
/// grids; a grid mismatch produces a warning, not an error.
pub fn aggregate(
    runs: &[Vec<MetricsRecord>],
    metric: &str,
    smooth: Option<usize>,
    warnings: &mut Vec<String>,
) -> Result<Vec<AggRow>> {
    let extract = METRICS
        .iter()
        .find(|(name, _)| *name == metric)
        .map(|(_, f)| *f)
        .with_context(|| format!("unknown metric {metric}"))?;
    let mut maps: Vec<BTreeMap<usize, f64>> = Vec::with_capacity(runs.len());
    for run in runs {
        let mut points: Vec<(usize, f64)> =
            run.iter().filter_map(|m| extract(m).map(|v| (m.k, v))).collect();
        if let Some(w) = smooth {
            points = smooth_series(&points, w.max(1));
        }
        maps.push(points.into_iter().collect());
    }
    let Some(first) = maps.first() else { return Ok(Vec::new()) };
    let mut common: Vec<usize> =
        first.keys().copied().filter(|k| maps.iter().all(|m| m.contains_key(k))).collect();
    common.sort_unstable();
    let union: usize = {
        let mut all: Vec<usize> = maps.iter().flat_map(|m| m.keys().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all.len()
    };
    if union != common.len() {
        warnings.push(format!(
            "{metric}: step grids differ across runs; aligned on the {}-step intersection",
            common.len()
        ));
    }
    Ok(common
        .into_iter()
        .map(|k| {
            let values: Vec<f64> = maps.iter().map(|m| m[&k]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            AggRow { step: k, mean, min, max, n: values.len() }
        })
        .collect())
}

fn csv_section(out: &mut String, metric: &str, rows: &[AggRow]) {
    use std::fmt::Write as _;
    for row in rows {
        writeln!(out, "{metric},{},{},{},{},{}", row.step, row.mean, row.min, row.max, row.n).unwrap();
    }
}

type ChartBuf = (Vec<(f64, f64)>, Vec<(f64, f64, f64)>);

fn chart_series<'a>(rows: &'a [AggRow], label: &'a str, color: &'a str, buf: &'a mut ChartBuf) -> Series<'a> {
    buf.0 = rows.iter().map(|r| (r.step as f64, r.mean)).collect();
    buf.1 = rows.iter().map(|r| (r.step as f64, r.min, r.max)).collect();
    let banded = rows.iter().any(|r| r.n > 1);
    Series { label, color, points: &buf.0, band: if banded { Some(&buf.1) } else { None } }
}

pub struct PlotOutcome {
    pub csv_path: PathBuf,
    pub chart_paths: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

pub fn cmd_plot(
    run_dirs: &[PathBuf],
    out_dir: &Path,
    smooth: Option<usize>,
    log: &mut impl Write,
) -> Result<PlotOutcome> {
    let files = discover_metrics_files(run_dirs)?;
    let runs: Vec<Vec<MetricsRecord>> =
        files.iter().map(|f| load_metrics(f)).collect::<Result<_>>()?;
    writeln!(log, "aggregating {} run(s)", runs.len())?;

    let mut warnings = Vec::new();
    let mut per_metric: BTreeMap<&str, Vec<AggRow>> = BTreeMap::new();
    for (name, _) in METRICS {
        per_metric.insert(name, aggregate(&runs, name, smooth, &mut warnings)?);
    }

    std::fs::create_dir_all(out_dir)?;
    let mut csv = String::from("metric,step,mean,min,max,n_runs\n");
    for (name, rows) in &per_metric {
        csv_section(&mut csv, name, rows);
    }
    let csv_path = out_dir.join("aggregate.csv");
    std::fs::write(&csv_path, csv)?;

    let mut chart_paths = Vec::new();
    {
        let mut buf = Default::default();
        let reward = chart_series(&per_metric["train_mean_reward"], "train reward", PALETTE[0], &mut buf);
        let path = out_dir.join("reward.svg");
        std::fs::write(&path, line_chart("Training reward", "step", "mean reward", &[reward]))?;
        chart_paths.push(path);
    }
    {
        let mut b1 = Default::default();
        let mut b2 = Default::default();
        let iid = chart_series(&per_metric["iid_success"], "IID", PALETTE[0], &mut b1);
        let ood = chart_series(&per_metric["ood_success"], "OOD", PALETTE[1], &mut b2);
        let path = out_dir.join("success.svg");
        std::fs::write(&path, line_chart("Success rate", "step", "success", &[iid, ood]))?;
        chart_paths.push(path);
    }
    {
        let mut b1 = Default::default();
        let mut b2 = Default::default();
        let mut b3 = Default::default();
        let batch = chart_series(&per_metric["batch_mean_entropy"], "batch", PALETTE[0], &mut b1);
        let early = chart_series(&per_metric["early_token_entropy"], "early", PALETTE[2], &mut b2);
        let late = chart_series(&per_metric["late_token_entropy"], "late", PALETTE[1], &mut b3);
        let path = out_dir.join("entropy.svg");
        std::fs::write(
            &path,
            line_chart("Token entropy", "step", "entropy (nats)", &[batch, early, late]),
        )?;
        chart_paths.push(path);
    }
    for w in &warnings {
        writeln!(log, "warning: {w}")?;
    }
    Ok(PlotOutcome { csv_path, chart_paths, warnings })
}
