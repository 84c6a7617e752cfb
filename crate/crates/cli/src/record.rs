//! Reproducibility record written next to every run's outputs.

use anyhow::{Context, Result};
use serde::Serialize;
use std::path::Path;

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a toml::Table,
}

/// `<command>.run.json`, so commands sharing an output directory keep
/// separate records.
pub fn record_name(command: &str) -> String {
    format!("{command}.run.json")
}

pub fn write(dir: &Path, command: &str, seed: u64, config: &toml::Table) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let rec = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
    };
    let path = dir.join(record_name(command));
    let text = serde_json::to_string_pretty(&rec)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
