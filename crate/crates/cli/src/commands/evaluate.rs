use super::matching::dump_path;
use super::Table;
use crate::config::{self, require_dir, require_file};
use crate::{record, ConfigArgs};
use anyhow::{bail, Context, Result};
use nalgebra::{Matrix3, Vector3};
use scalenet::datagen::ManifestSource;
use scalenet::eval::{
    accuracy_vs_scale_curve, avg_l1_discrepancy, constant_predictor_error, estimate_relative_pose, fpe_or_failure, maa,
    pck, RansacConfig, RelativePose, DEFAULT_ACCURACY_THRESHOLD, DEFAULT_MAA_THRESHOLD, DEFAULT_PCK_THRESHOLD,
};
use scalenet::sdaim::read_match_dump;
use scalenet::ScaleRatio;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const SUMMARY_FILE: &str = "metrics.csv";
pub const POSE_ERRORS_FILE: &str = "pose_errors.csv";
pub const CURVE_FILE: &str = "accuracy_curve.csv";
pub const PCK_FILE: &str = "pck.csv";

const METHODS: [&str; 2] = ["sdaim", "baseline"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateOptions {
    seed: u64,
    out_dir: PathBuf,
    /// Table with `gt_ratio` and `s` columns, as written by `estimate`.
    #[serde(default)]
    ratios: Option<PathBuf>,
    /// Table with `fpe` (degrees) and `gt_ratio` columns and an optional
    /// `method` column.
    #[serde(default)]
    pose_errors: Option<PathBuf>,
    /// Per-pair cameras and ground-truth motion; poses are estimated from the
    /// dumps in `matches_dir`.
    #[serde(default)]
    poses: Option<PathBuf>,
    /// Output directory of `match`.
    #[serde(default)]
    matches_dir: Option<PathBuf>,
    /// Manifest with placements, for correspondence accuracy of the dumps.
    #[serde(default)]
    manifest: Option<PathBuf>,
    #[serde(default = "default_pck")]
    pck_threshold: f64,
    #[serde(default = "default_maa")]
    maa_threshold: f64,
    #[serde(default = "default_accuracy")]
    accuracy_threshold: f64,
    #[serde(default = "default_ransac_threshold")]
    ransac_threshold: f64,
    #[serde(default = "default_ransac_confidence")]
    ransac_confidence: f64,
    #[serde(default = "default_ransac_iterations")]
    ransac_max_iterations: usize,
}

fn default_pck() -> f64 {
    DEFAULT_PCK_THRESHOLD
}
fn default_maa() -> f64 {
    DEFAULT_MAA_THRESHOLD
}
fn default_accuracy() -> f64 {
    DEFAULT_ACCURACY_THRESHOLD
}
fn default_ransac_threshold() -> f64 {
    RansacConfig::default().reproj_threshold
}
fn default_ransac_confidence() -> f64 {
    RansacConfig::default().confidence
}
fn default_ransac_iterations() -> usize {
    RansacConfig::default().max_iterations
}

/// `(metric, method, value)` rows of the summary table.
type Summary = Vec<(String, String, f64)>;

fn ratio_column(t: &Table, name: &str) -> Result<Vec<ScaleRatio>> {
    t.floats(name)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| ScaleRatio::from_value(v).with_context(|| format!("{} row {}: `{name}`", t.path.display(), i + 1)))
        .collect()
}

fn ratio_metrics(path: &Path, summary: &mut Summary) -> Result<()> {
    let t = Table::read(path)?;
    let gt = ratio_column(&t, "gt_ratio")?;
    let pred = ratio_column(&t, "s")?;
    if gt.is_empty() {
        bail!("{} has no rows", path.display());
    }
    summary.push(("E".into(), "estimate".into(), avg_l1_discrepancy(&gt, &pred)?));
    summary.push(("E0".into(), "constant".into(), constant_predictor_error(&gt)?));
    Ok(())
}

/// Pose errors grouped by method, in row order.
type PoseErrors = BTreeMap<String, Vec<(f64, ScaleRatio)>>;

fn read_pose_errors(path: &Path) -> Result<PoseErrors> {
    let t = Table::read(path)?;
    let fpe = t.floats("fpe")?;
    let gt = ratio_column(&t, "gt_ratio")?;
    let method = t.column("method").ok();
    let mut out = PoseErrors::new();
    for (i, row) in t.rows.iter().enumerate() {
        let m = method.and_then(|c| row.get(c)).unwrap_or("all").to_string();
        out.entry(m).or_default().push((fpe[i], gt[i]));
    }
    Ok(out)
}

fn intrinsics(v: &[f64]) -> Matrix3<f64> {
    Matrix3::new(v[0], 0.0, v[2], 0.0, v[1], v[3], 0.0, 0.0, 1.0)
}

fn estimate_pose_errors(poses: &Path, matches_dir: &Path, ransac: &RansacConfig, out: &Path) -> Result<PoseErrors> {
    let t = Table::read(poses)?;
    let pair_col = t.column("pair")?;
    let gt = ratio_column(&t, "gt_ratio")?;
    let names = [
        "fx1", "fy1", "cx1", "cy1", "fx2", "fy2", "cx2", "cy2", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32",
        "r33", "t1", "t2", "t3",
    ];
    let cols = names.iter().map(|n| t.floats(n)).collect::<Result<Vec<_>>>()?;
    let mut w = super::csv_writer(out)?;
    w.write_record(["pair", "method", "gt_ratio", "matches", "fpe"])?;
    let mut errors = PoseErrors::new();
    for (i, row) in t.rows.iter().enumerate() {
        let pair: usize = row
            .get(pair_col)
            .unwrap_or("")
            .trim()
            .parse()
            .with_context(|| format!("{} row {}: `pair` is not an index", poses.display(), i + 1))?;
        let v: Vec<f64> = cols.iter().map(|c| c[i]).collect();
        let gt_pose = RelativePose {
            rotation: Matrix3::from_row_slice(&v[8..17]),
            translation: Vector3::new(v[17], v[18], v[19]),
        };
        let (k1, k2) = (intrinsics(&v[0..4]), intrinsics(&v[4..8]));
        for method in METHODS {
            let path = dump_path(matches_dir, pair, method);
            require_file(&path, "match dump")?;
            let corr = read_match_dump(&path)?.correspondences();
            let p1: Vec<_> = corr.iter().map(|c| c.0).collect();
            let p2: Vec<_> = corr.iter().map(|c| c.1).collect();
            let est = estimate_relative_pose(&p1, &p2, &k1, &k2, ransac);
            let fpe = fpe_or_failure(&est, &gt_pose)?;
            w.write_record([
                pair.to_string(),
                method.to_string(),
                gt[i].value().to_string(),
                corr.len().to_string(),
                fpe.to_string(),
            ])?;
            errors.entry(method.to_string()).or_default().push((fpe, gt[i]));
        }
    }
    w.flush()?;
    Ok(errors)
}

fn pose_metrics(errors: &PoseErrors, o: &EvaluateOptions, summary: &mut Summary) -> Result<()> {
    let mut curves = BTreeMap::new();
    for (method, samples) in errors {
        let fpe: Vec<f64> = samples.iter().map(|s| s.0).collect();
        summary.push((format!("mAA@{}", o.maa_threshold), method.clone(), maa(&fpe, o.maa_threshold)?));
        curves.insert(method.clone(), accuracy_vs_scale_curve(samples, o.accuracy_threshold));
    }
    let bins: std::collections::BTreeSet<u32> = curves.values().flatten().map(|b| b.bin).collect();
    let mut w = super::csv_writer(&o.out_dir.join(CURVE_FILE))?;
    let mut header = vec!["bin".to_string()];
    for m in curves.keys() {
        header.push(format!("count_{m}"));
        header.push(format!("accuracy_{m}"));
    }
    w.write_record(&header)?;
    for bin in bins {
        let mut row = vec![bin.to_string()];
        for curve in curves.values() {
            match curve.iter().find(|b| b.bin == bin) {
                Some(b) => row.extend([b.count.to_string(), b.accuracy.to_string()]),
                None => row.extend(["0".to_string(), String::new()]),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Fraction of detected keypoints in image 1 whose match lands within the
/// threshold, measured with the synthetic placement of each pair.
fn pck_metrics(manifest: &Path, matches_dir: &Path, o: &EvaluateOptions, summary: &mut Summary) -> Result<()> {
    let source = ManifestSource::open(manifest)?;
    let mut w = super::csv_writer(&o.out_dir.join(PCK_FILE))?;
    w.write_record(["pair", "method", "keypoints", "matches", "pck"])?;
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (i, rec) in source.records().iter().enumerate() {
        let Some(placement) = &rec.placement else {
            log::warn!("pair {i} has no placement; skipped for PCK");
            continue;
        };
        for method in METHODS {
            let path = dump_path(matches_dir, i, method);
            require_file(&path, "match dump")?;
            let dump = read_match_dump(&path)?;
            let n1: usize = dump
                .get("keypoints")
                .and_then(|v| v.split_whitespace().next())
                .and_then(|v| v.parse().ok())
                .with_context(|| format!("{} lacks a `keypoints` header", path.display()))?;
            let corr = dump.correspondences();
            let v = if n1 == 0 {
                0.0
            } else {
                pck(&corr, |p| placement.warp_1_to_2(p[0], p[1]), n1, o.pck_threshold)?
            };
            w.write_record([i.to_string(), method.to_string(), n1.to_string(), corr.len().to_string(), v.to_string()])?;
            let e = sums.entry(method).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    w.flush()?;
    for (method, (sum, n)) in sums {
        summary.push((format!("PCK@{}", o.pck_threshold), method.to_string(), sum / n as f64));
    }
    Ok(())
}

pub fn run(args: &ConfigArgs) -> Result<()> {
    let (o, table) = config::load::<EvaluateOptions>(args)?;
    for p in [&o.ratios, &o.pose_errors, &o.poses, &o.manifest].into_iter().flatten() {
        require_file(p, "input")?;
    }
    if let Some(d) = &o.matches_dir {
        require_dir(d, "matches_dir")?;
    }
    if (o.poses.is_some() || o.manifest.is_some()) && o.matches_dir.is_none() {
        bail!("`poses` and `manifest` need `matches_dir`");
    }
    if o.poses.is_some() && o.pose_errors.is_some() {
        bail!("give either `poses` or `pose_errors`, not both");
    }
    if o.ratios.is_none() && o.pose_errors.is_none() && o.poses.is_none() && o.manifest.is_none() {
        bail!("nothing to evaluate: set `ratios`, `pose_errors`, `poses` or `manifest`");
    }
    let ransac = RansacConfig {
        reproj_threshold: o.ransac_threshold,
        confidence: o.ransac_confidence,
        max_iterations: o.ransac_max_iterations,
        seed: o.seed,
    };
    ransac.validate()?;
    std::fs::create_dir_all(&o.out_dir).with_context(|| format!("creating {}", o.out_dir.display()))?;
    let mut summary = Summary::new();
    if let Some(p) = &o.ratios {
        ratio_metrics(p, &mut summary)?;
    }
    let errors = match (&o.pose_errors, &o.poses, &o.matches_dir) {
        (Some(p), _, _) => Some(read_pose_errors(p)?),
        (None, Some(p), Some(d)) => Some(estimate_pose_errors(p, d, &ransac, &o.out_dir.join(POSE_ERRORS_FILE))?),
        _ => None,
    };
    if let Some(e) = errors.filter(|e| !e.is_empty()) {
        pose_metrics(&e, &o, &mut summary)?;
    }
    if let (Some(m), Some(d)) = (&o.manifest, &o.matches_dir) {
        pck_metrics(m, d, &o, &mut summary)?;
    }
    let path = o.out_dir.join(SUMMARY_FILE);
    let mut w = super::csv_writer(&path)?;
    w.write_record(["metric", "method", "value"])?;
    for (metric, method, value) in &summary {
        w.write_record([metric.as_str(), method.as_str(), &value.to_string()])?;
        println!("{metric} {method} {value:.6}");
    }
    w.flush()?;
    record::write(&o.out_dir, "evaluate", o.seed, &table)?;
    Ok(())
}
