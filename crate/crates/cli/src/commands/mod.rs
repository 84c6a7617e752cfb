pub mod estimate;
pub mod evaluate;
pub mod generate;
pub mod matching;
pub mod plot;
pub mod train;

use anyhow::{Context, Result};
use std::path::Path;

/// Opens a CSV writer, creating parent directories.
pub fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// A CSV table read fully into memory with column lookup by name.
pub struct Table {
    pub path: std::path::PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let headers = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no column `{name}`", self.path.display()))
    }

    /// All values of a numeric column.
    pub fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let v = r.get(c).unwrap_or("");
                v.trim()
                    .parse::<f64>()
                    .with_context(|| format!("{} row {}: column `{name}` value {v:?} is not a number", self.path.display(), i + 1))
            })
            .collect()
    }
}
