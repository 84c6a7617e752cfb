use crate::config::{self, require_dir};
use crate::{record, ConfigArgs};
use anyhow::{bail, Result};
use scalenet::datagen::{
    generate_dataset, DirectoryCorpus, GeneratorConfig, ImageCorpus, ProceduralCorpus, Provenance,
    MANIFEST_FILE,
};
use scalenet::ScaleRatio;
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateOptions {
    seed: u64,
    out_dir: PathBuf,
    n: usize,
    /// Image folders; procedural blob and cloud images are used when absent.
    #[serde(default)]
    content_dir: Option<PathBuf>,
    #[serde(default)]
    background_dir: Option<PathBuf>,
    #[serde(default = "default_procedural_count")]
    procedural_count: usize,
    #[serde(default = "default_procedural_size")]
    procedural_size: usize,
    #[serde(default = "default_resolution")]
    resolution: usize,
    #[serde(default = "default_fraction_min")]
    content_fraction_min: f64,
    #[serde(default = "default_fraction_max")]
    content_fraction_max: f64,
    #[serde(default)]
    m_min: f64,
    #[serde(default = "default_m_max")]
    m_max: f64,
}

fn default_procedural_count() -> usize {
    64
}
fn default_procedural_size() -> usize {
    256
}
fn default_resolution() -> usize {
    GeneratorConfig::default().resolution
}
fn default_fraction_min() -> f64 {
    GeneratorConfig::default().content_fraction.0
}
fn default_fraction_max() -> f64 {
    GeneratorConfig::default().content_fraction.1
}
fn default_m_max() -> f64 {
    GeneratorConfig::default().m_range.1
}

fn corpus(dir: &Option<PathBuf>, what: &str, procedural: impl FnOnce() -> ProceduralCorpus) -> Result<Box<dyn ImageCorpus>> {
    match dir {
        Some(d) => {
            require_dir(d, what)?;
            let c = DirectoryCorpus::open(d)?;
            if c.files().is_empty() {
                bail!("{what} {} holds no images", d.display());
            }
            Ok(Box::new(c))
        }
        None => Ok(Box::new(procedural())),
    }
}

pub fn run(args: &ConfigArgs) -> Result<()> {
    let (o, table) = config::load::<GenerateOptions>(args)?;
    let content = corpus(&o.content_dir, "content corpus", || {
        ProceduralCorpus::blobs(o.procedural_count, o.procedural_size, o.seed)
    })?;
    let backgrounds = corpus(&o.background_dir, "background corpus", || {
        ProceduralCorpus::clouds(o.procedural_count, o.procedural_size, o.seed.wrapping_add(1))
    })?;
    let cfg = GeneratorConfig {
        resolution: o.resolution,
        content_fraction: (o.content_fraction_min, o.content_fraction_max),
        m_range: (o.m_min, o.m_max),
        seed: o.seed,
    };
    cfg.validate()?;
    let records = generate_dataset(content.as_ref(), backgrounds.as_ref(), o.n, &cfg, &o.out_dir)?;
    record::write(&o.out_dir, "generate", o.seed, &table)?;
    let down = records.iter().filter(|r| r.provenance == Provenance::SyntheticDown).count();
    println!(
        "wrote {} pairs to {} ({down} down, {} up)",
        records.len(),
        o.out_dir.join(MANIFEST_FILE).display(),
        records.len() - down
    );
    // Zoom between the two images regardless of direction: max(s, 1/s).
    let zoom = |r: ScaleRatio| r.log2().abs().exp2();
    if let (Some(lo), Some(hi)) = (
        records.iter().map(|r| zoom(r.gt_ratio)).reduce(f64::min),
        records.iter().map(|r| zoom(r.gt_ratio)).reduce(f64::max),
    ) {
        println!("zoom range [{lo:.4}, {hi:.4}]");
    }
    Ok(())
}
