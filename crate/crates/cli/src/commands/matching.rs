use crate::config::{self, require_file};
use crate::{record, ConfigArgs};
use anyhow::{bail, Context, Result};
use scalenet::datagen::ManifestSource;
use scalenet::eval::DEFAULT_PCK_THRESHOLD;
use scalenet::net::ScaleNet;
use scalenet::sdaim::{
    match_baseline, match_with_sdaim, FixedRatio, MatchSet, ResizeOptions, ScaleEstimator, SiftAdapter,
    SiftConfig,
};
use serde::Deserialize;
use std::path::{Path, PathBuf};

pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum EstimatorChoice {
    Checkpoint,
    GroundTruth,
    Unit,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchOptions {
    seed: u64,
    manifest: PathBuf,
    out_dir: PathBuf,
    estimator: EstimatorChoice,
    #[serde(default)]
    checkpoint: Option<PathBuf>,
    #[serde(default = "default_max_keypoints")]
    max_keypoints: usize,
    #[serde(default = "default_ratio_test")]
    ratio_test: f64,
    /// Shrink image 1 and enlarge image 2 instead of the reverse.
    #[serde(default)]
    flip: bool,
    /// Pixel threshold for counting a match as correct on synthetic pairs.
    #[serde(default = "default_inlier_threshold")]
    inlier_threshold: f64,
}

fn default_max_keypoints() -> usize {
    SiftConfig::default().max_keypoints
}
fn default_ratio_test() -> f64 {
    SiftAdapter::default().ratio_test_threshold
}
fn default_inlier_threshold() -> f64 {
    DEFAULT_PCK_THRESHOLD
}

/// Dump file of pair `index` for `method` (`sdaim` or `baseline`).
pub fn dump_path(dir: &Path, index: usize, method: &str) -> PathBuf {
    dir.join(format!("pair_{index:06}_{method}.csv"))
}

pub fn run(args: &ConfigArgs) -> Result<()> {
    let (o, table) = config::load::<MatchOptions>(args)?;
    require_file(&o.manifest, "manifest")?;
    let model = match (o.estimator, &o.checkpoint) {
        (EstimatorChoice::Checkpoint, Some(path)) => {
            require_file(path, "checkpoint")?;
            Some(ScaleNet::<f32>::load(path).with_context(|| format!("loading {}", path.display()))?)
        }
        (EstimatorChoice::Checkpoint, None) => bail!("estimator `checkpoint` needs a `checkpoint` path"),
        (_, Some(_)) => bail!("`checkpoint` is only used with estimator `checkpoint`"),
        (_, None) => None,
    };
    let adapter = SiftAdapter {
        sift: SiftConfig {
            max_keypoints: o.max_keypoints,
            ..SiftConfig::default()
        },
        ratio_test_threshold: o.ratio_test,
    };
    adapter.validate()?;
    let opts = ResizeOptions {
        flip: o.flip,
        ..ResizeOptions::default()
    };
    let source = ManifestSource::open(&o.manifest)?;
    std::fs::create_dir_all(&o.out_dir).with_context(|| format!("creating {}", o.out_dir.display()))?;
    let path = o.out_dir.join(SUMMARY_FILE);
    let mut w = super::csv_writer(&path)?;
    w.write_record([
        "pair",
        "gt_ratio",
        "ratio",
        "r1",
        "r2",
        "sdaim_matches",
        "sdaim_inliers",
        "baseline_matches",
        "baseline_inliers",
    ])?;
    let (mut total_sdaim, mut total_base, mut counted) = (0usize, 0usize, 0usize);
    for (i, rec) in source.records().iter().enumerate() {
        let (a, b) = source.load_pair(i)?;
        let fixed = match o.estimator {
            EstimatorChoice::GroundTruth => FixedRatio::ground_truth(rec.gt_ratio),
            _ => FixedRatio::unit(),
        };
        let estimator: &dyn ScaleEstimator = match &model {
            Some(m) => m,
            None => &fixed,
        };
        let sdaim = match_with_sdaim(&a, &b, estimator, &adapter, &opts)
            .with_context(|| format!("pair {i}: scale-aware matching"))?;
        let base = match_baseline(&a, &b, &adapter).with_context(|| format!("pair {i}: baseline matching"))?;
        sdaim.write_dump(&dump_path(&o.out_dir, i, "sdaim"))?;
        base.write_dump(&dump_path(&o.out_dir, i, "baseline"))?;
        let inliers = |set: &MatchSet| {
            rec.placement
                .as_ref()
                .map(|p| set.count_inliers(|x, y| p.match_error(x, y), o.inlier_threshold))
        };
        let (ni_s, ni_b) = (inliers(&sdaim), inliers(&base));
        if let (Some(s), Some(b)) = (ni_s, ni_b) {
            total_sdaim += s;
            total_base += b;
            counted += 1;
        }
        let show = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_default();
        let (r1, r2) = sdaim.resize_factors;
        w.write_record([
            i.to_string(),
            rec.gt_ratio.value().to_string(),
            sdaim.ratio.value().to_string(),
            r1.to_string(),
            r2.to_string(),
            sdaim.len().to_string(),
            show(ni_s),
            base.len().to_string(),
            show(ni_b),
        ])?;
    }
    w.flush()?;
    record::write(&o.out_dir, "match", o.seed, &table)?;
    println!("matched {} pairs, summary in {}", source.records().len(), path.display());
    if counted > 0 {
        println!(
            "mean inliers: scale-aware {:.2}, baseline {:.2}",
            total_sdaim as f64 / counted as f64,
            total_base as f64 / counted as f64
        );
    }
    Ok(())
}
