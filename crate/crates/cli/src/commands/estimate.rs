use crate::config::{self, require_file};
use crate::{record, ConfigArgs};
use anyhow::{Context, Result};
use scalenet::datagen::ManifestSource;
use scalenet::net::ScaleNet;
use serde::Deserialize;
use std::path::PathBuf;

pub const RATIOS_FILE: &str = "ratios.csv";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateOptions {
    seed: u64,
    checkpoint: PathBuf,
    manifest: PathBuf,
    out_dir: PathBuf,
    /// Also predict the swapped pair and report the product of both ratios.
    #[serde(default)]
    both_orders: bool,
}

pub fn run(args: &ConfigArgs) -> Result<()> {
    let (o, table) = config::load::<EstimateOptions>(args)?;
    require_file(&o.checkpoint, "checkpoint")?;
    require_file(&o.manifest, "manifest")?;
    let model = ScaleNet::<f32>::load(&o.checkpoint).with_context(|| format!("loading {}", o.checkpoint.display()))?;
    let source = ManifestSource::open(&o.manifest)?;
    let path = o.out_dir.join(RATIOS_FILE);
    let mut w = super::csv_writer(&path)?;
    let mut header = vec!["pair", "path1", "path2", "gt_ratio", "s", "log2_s"];
    if o.both_orders {
        header.extend(["s_swapped", "log2_s_swapped", "product"]);
    }
    w.write_record(&header)?;
    for (i, rec) in source.records().iter().enumerate() {
        let (a, b) = source.load_pair(i)?;
        let mut row = vec![
            i.to_string(),
            rec.path1.display().to_string(),
            rec.path2.display().to_string(),
            rec.gt_ratio.value().to_string(),
        ];
        let (s, swapped) = if o.both_orders {
            let (s, t) = model.estimate_both(&a, &b)?;
            (s, Some(t))
        } else {
            (model.estimate(&a, &b)?, None)
        };
        row.extend([s.value().to_string(), s.log2().to_string()]);
        if let Some(t) = swapped {
            row.extend([
                t.value().to_string(),
                t.log2().to_string(),
                (s.log2() + t.log2()).exp2().to_string(),
            ]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    record::write(&o.out_dir, "estimate", o.seed, &table)?;
    println!("wrote {} estimates to {}", source.records().len(), path.display());
    Ok(())
}
