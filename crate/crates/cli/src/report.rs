//! `report`: recompute summary numbers from the metrics files alone and
//! print them as a table or JSON.

use anyhow::{bail, Context, Result};
use efl_core::fedcore::RoundMetrics;
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    /// Best mean testing accuracy: max over rounds of the per-client mean.
    pub bmta: f64,
    pub final_round: u32,
    pub final_loss: f64,
    pub final_acc_mean: f64,
    pub total_bits_up: u64,
    pub total_bits_down: u64,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub seeds: Vec<SeedSummary>,
    pub bmta_mean: f64,
    pub bmta_std: f64,
    pub final_loss_mean: f64,
}

pub fn read_metrics(path: &Path) -> Result<Vec<RoundMetrics>> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec.with_context(|| format!("parsing {}", path.display()))?);
    }
    Ok(rows)
}

pub fn summarize_seed(seed: u64, rows: &[RoundMetrics]) -> Result<SeedSummary> {
    if rows.is_empty() {
        bail!("metrics file for seed {seed} has no rows");
    }
    let bmta = rows
        .iter()
        .map(|r| r.test_acc_mean)
        .filter(|a| !a.is_nan())
        .fold(f64::NAN, f64::max);
    let last = rows.last().unwrap();
    Ok(SeedSummary {
        seed,
        bmta,
        final_round: last.round,
        final_loss: last.train_loss,
        final_acc_mean: last.test_acc_mean,
        total_bits_up: rows.iter().map(|r| r.bits_up).sum(),
        total_bits_down: rows.iter().map(|r| r.bits_down).sum(),
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn build_report(dir: &Path) -> Result<RunReport> {
    let mut files: Vec<(u64, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(seed) = name
            .strip_prefix("metrics_seed")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            files.push((seed, path));
        }
    }
    if files.is_empty() {
        bail!("no metrics_seed*.csv files in {}", dir.display());
    }
    files.sort_by_key(|(seed, _)| *seed);

    let mut seeds = Vec::new();
    for (seed, path) in files {
        let rows = read_metrics(&path)?;
        seeds.push(summarize_seed(seed, &rows)?);
    }
    let (bmta_mean, bmta_std) = mean_std(&seeds.iter().map(|s| s.bmta).collect::<Vec<_>>());
    let (final_loss_mean, _) = mean_std(&seeds.iter().map(|s| s.final_loss).collect::<Vec<_>>());
    Ok(RunReport {
        seeds,
        bmta_mean,
        bmta_std,
        final_loss_mean,
    })
}

pub fn cmd_report(dir: &Path, json: bool) -> Result<()> {
    let report = build_report(dir)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!(
        "{:>8} {:>10} {:>12} {:>12} {:>14} {:>14}",
        "seed", "bmta", "final_loss", "final_acc", "bits_up", "bits_down"
    );
    for s in &report.seeds {
        println!(
            "{:>8} {:>10.4} {:>12.6} {:>12.4} {:>14} {:>14}",
            s.seed, s.bmta, s.final_loss, s.final_acc_mean, s.total_bits_up, s.total_bits_down
        );
    }
    println!(
        "aggregate: bmta {:.4} +/- {:.4}, final loss {:.6} ({} seed(s))",
        report.bmta_mean,
        report.bmta_std,
        report.final_loss_mean,
        report.seeds.len()
    );
    Ok(())
}
