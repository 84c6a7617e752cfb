//! Flat TOML configs with `key=value` overrides.

use crate::ConfigArgs;
use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use std::path::Path;

/// Parses one override. Values that are not valid TOML are taken as strings,
/// so `--set out_dir=runs/a` needs no quoting.
fn parse_override(item: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = item
        .split_once('=')
        .with_context(|| format!("override {item:?} is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("override {item:?} has an empty key");
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Merged key/value table of a run, file first, overrides after.
pub fn merged_table(args: &ConfigArgs) -> Result<toml::Table> {
    let mut table = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            text.parse::<toml::Table>()
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => toml::Table::new(),
    };
    if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table()) {
        bail!("config key {k:?} is a table; configs are flat");
    }
    for item in &args.set {
        let (k, v) = parse_override(item)?;
        table.insert(k, v);
    }
    Ok(table)
}

/// Deserializes the merged table into a command's option struct.
pub fn load<T: DeserializeOwned>(args: &ConfigArgs) -> Result<(T, toml::Table)> {
    let table = merged_table(args)?;
    let opts = T::deserialize(toml::Value::Table(table.clone())).context("invalid configuration")?;
    Ok((opts, table))
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} {} is not a directory", path.display());
    }
    Ok(())
}
