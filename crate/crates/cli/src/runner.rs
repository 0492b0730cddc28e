//! `run` and `validate`: load + override + strictly parse a config, execute
//! each seed, and write metrics CSVs plus a deterministic manifest. Output
//! files appear only after every seed has finished, each via temp + rename.

use crate::overrides;
use anyhow::{Context, Result};
use efl_core::config::ExperimentConfig;
use efl_core::fedcore::{RoundMetrics, SimOptions};
use serde::Serialize;
use std::path::{Path, PathBuf};

pub fn load_config(path: &Path, sets: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut doc: toml::Value = text
        .parse()
        .with_context(|| format!("parsing TOML in {}", path.display()))?;
    overrides::apply(&mut doc, sets)?;
    let config: ExperimentConfig = doc
        .try_into()
        .context("config does not match the expected schema")?;
    Ok(config)
}

pub fn cmd_validate(path: &Path, sets: &[String], data_root: Option<&Path>) -> Result<()> {
    let config = load_config(path, sets)?;
    config.validate(data_root)?;
    println!(
        "ok: {} clients, {} rounds, {} seed(s), output {}",
        config.dataset.n_clients(),
        config.hyper.rounds,
        config.run.seeds.len(),
        config.run.output_dir
    );
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    commit: String,
    seeds: &'a [u64],
    config: &'a ExperimentConfig,
}

fn git_commit() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

pub fn metrics_file_name(seed: u64) -> String {
    format!("metrics_seed{seed}.csv")
}

pub fn metrics_to_csv(metrics: &[RoundMetrics]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in metrics {
        w.serialize(m)?;
    }
    Ok(w.into_inner()?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn cmd_run(
    path: &Path,
    sets: &[String],
    data_root: Option<&Path>,
    sequential: bool,
) -> Result<()> {
    let config = load_config(path, sets)?;
    config.validate(data_root)?;

    let options = SimOptions {
        parallel: !sequential && SimOptions::default().parallel,
        trace: false,
    };

    // Run every seed before writing anything, so a failure leaves no
    // partial outputs behind.
    let mut results: Vec<(u64, Vec<RoundMetrics>)> = Vec::new();
    for &seed in &config.run.seeds {
        let t0 = std::time::Instant::now();
        let metrics = config
            .run_seed(seed, data_root, options)
            .with_context(|| format!("running seed {seed}"))?;
        eprintln!(
            "seed {seed}: {} rounds evaluated in {} ms",
            metrics.len(),
            t0.elapsed().as_millis()
        );
        results.push((seed, metrics));
    }

    let out_dir = PathBuf::from(&config.run.output_dir);
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;

    let mut written: Vec<PathBuf> = Vec::new();
    let write_all = |written: &mut Vec<PathBuf>| -> Result<()> {
        for (seed, metrics) in &results {
            let path = out_dir.join(metrics_file_name(*seed));
            write_atomic(&path, &metrics_to_csv(metrics)?)?;
            written.push(path);
        }
        let manifest = Manifest {
            commit: git_commit(),
            seeds: &config.run.seeds,
            config: &config,
        };
        let manifest_path = out_dir.join("manifest.toml");
        write_atomic(&manifest_path, toml::to_string_pretty(&manifest)?.as_bytes())?;
        written.push(manifest_path);
        // Effective config echo, directly reusable as a run input.
        let config_path = out_dir.join("config.toml");
        write_atomic(&config_path, toml::to_string_pretty(&config)?.as_bytes())?;
        written.push(config_path);
        Ok(())
    };
    if let Err(e) = write_all(&mut written) {
        for p in &written {
            let _ = std::fs::remove_file(p);
        }
        return Err(e);
    }

    println!(
        "wrote {} metrics file(s) + manifest to {}",
        results.len(),
        out_dir.display()
    );
    Ok(())
}
