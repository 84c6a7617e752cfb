use crate::config::{self, require_file};
use crate::{record, ConfigArgs};
use anyhow::{Context, Result};
use scalenet::datagen::ManifestSource;
use scalenet::net::checkpoint::Archive;
use scalenet::net::{EncoderConfig, EncoderKind, ScaleNet, ScaleNetConfig};
use scalenet::train::{TrainConfig, Trainer};
use serde::Deserialize;
use std::path::{Path, PathBuf};

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOptions {
    seed: u64,
    manifest: PathBuf,
    out_dir: PathBuf,
    /// Continue from a checkpoint written by an earlier run; model and
    /// training settings then come from the checkpoint, except `epochs`.
    #[serde(default)]
    resume: Option<PathBuf>,
    /// Stop after this many optimizer steps in this invocation.
    #[serde(default)]
    max_steps: Option<usize>,
    #[serde(default)]
    epochs: Option<usize>,
    #[serde(default)]
    batch_size: Option<usize>,
    #[serde(default)]
    learning_rate: Option<f64>,
    #[serde(default)]
    input_resolution: Option<usize>,
    #[serde(default)]
    augment_magnitude: Option<f64>,
    #[serde(default)]
    lambda_dual: Option<f64>,
    #[serde(default)]
    lambda_consistent: Option<f64>,
    #[serde(default)]
    encoder: Option<EncoderKind>,
    #[serde(default)]
    encoder_widths: Option<Vec<usize>>,
    #[serde(default)]
    regressor_width: Option<usize>,
    #[serde(default)]
    cvarm: Option<bool>,
    /// torchvision ResNet-18 weights (safetensors) for a `pretrained-deep` encoder.
    #[serde(default)]
    encoder_weights: Option<PathBuf>,
}

impl TrainOptions {
    fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            input_resolution: self.input_resolution.unwrap_or(d.input_resolution),
            augment_magnitude: self.augment_magnitude.unwrap_or(d.augment_magnitude),
            lambda_dual: self.lambda_dual.unwrap_or(d.lambda_dual),
            lambda_consistent: self.lambda_consistent.unwrap_or(d.lambda_consistent),
            seed: self.seed,
        }
    }

    fn model_config(&self, resolution: usize) -> ScaleNetConfig {
        let d = ScaleNetConfig::default();
        let encoder = match self.encoder.unwrap_or(d.encoder.kind) {
            EncoderKind::PretrainedDeep => EncoderConfig::pretrained_deep(),
            EncoderKind::SmallRandom => {
                EncoderConfig::small_random(self.encoder_widths.clone().unwrap_or(d.encoder.widths.clone()))
            }
        };
        ScaleNetConfig {
            encoder,
            resolution,
            regressor_width: self.regressor_width.unwrap_or(d.regressor_width),
            cvarm: self.cvarm.unwrap_or(d.cvarm),
            rounding: d.rounding,
        }
    }
}

fn write_history(path: &Path, trainer: &Trainer) -> Result<()> {
    let mut w = super::csv_writer(path)?;
    for row in trainer.history() {
        w.serialize(row)?;
    }
    if trainer.history().is_empty() {
        w.write_record(["epoch", "step", "ld", "lc", "total"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &ConfigArgs) -> Result<()> {
    let (o, table) = config::load::<TrainOptions>(args)?;
    require_file(&o.manifest, "manifest")?;
    let mut trainer = match &o.resume {
        Some(path) => {
            require_file(path, "checkpoint")?;
            let archive = Archive::load(path)?;
            Trainer::from_archive(&archive, o.epochs).with_context(|| format!("resuming from {}", path.display()))?
        }
        None => {
            let cfg = o.train_config();
            let mut model = ScaleNet::<f32>::new(o.model_config(cfg.input_resolution), o.seed)?;
            if let Some(path) = &o.encoder_weights {
                require_file(path, "encoder weights")?;
                let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
                model.load_encoder_weights(&bytes)?;
            }
            Trainer::new(model, cfg)?
        }
    };
    let source = ManifestSource::open(&o.manifest)?;
    std::fs::create_dir_all(&o.out_dir).with_context(|| format!("creating {}", o.out_dir.display()))?;
    let started = std::time::Instant::now();
    match o.max_steps {
        Some(n) => {
            trainer.run_steps(&source, n)?;
        }
        None => trainer.run(&source)?,
    }
    trainer.to_archive()?.save(&o.out_dir.join(CHECKPOINT_FILE))?;
    write_history(&o.out_dir.join(HISTORY_FILE), &trainer)?;
    record::write(&o.out_dir, "train", o.seed, &table)?;
    let last = trainer.history().last();
    println!(
        "{} steps over {} pairs in {:.1} s, epoch {}/{}{}",
        trainer.steps_done(),
        source.records().len(),
        started.elapsed().as_secs_f64(),
        trainer.epoch(),
        trainer.config().epochs,
        last.map(|r| format!(", last loss {:.5}", r.total)).unwrap_or_default()
    );
    Ok(())
}
