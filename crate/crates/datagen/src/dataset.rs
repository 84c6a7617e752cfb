//! Dataset generation, line-delimited manifests and pair sources for training.
//!
//! Manifest schema, one JSON object per line:
//!
//! ```text
//! {"path1": "...", "path2": "...", "gt_ratio": 8.0, "provenance": "synthetic-down",
//!  "placement": {"zoom_exponent": 3.0, "content_height": .., "content_width": ..,
//!                "view1": {..}, "view2": {..}}}
//! ```
//!
//! `gt_ratio` is `phi(image at path1, image at path2)`. Relative paths are
//! resolved against the manifest's directory. `placement` is present for
//! synthetic pairs only.

use super::corpus::ImageCorpus;
use super::synth::{make_pair_downsample, make_pair_upsample, Placement, Provenance, SyntheticPair, MAX_ZOOM_EXPONENT};
use scalenet_core::error::{Error, Result};
use scalenet_core::image::{scaled_dim, Image, Rounding};
use scalenet_core::ratio::ScaleRatio;
use scalenet_train::{PairSource, TrainSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub path1: PathBuf,
    pub path2: PathBuf,
    pub gt_ratio: ScaleRatio,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Placement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Side of the square output images.
    pub resolution: usize,
    /// Range of the content's longer side as a fraction of `resolution`.
    pub content_fraction: (f64, f64),
    /// Zoom exponents `m` are drawn uniformly from this closed range.
    pub m_range: (f64, f64),
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            resolution: 160,
            content_fraction: (0.5, 0.8),
            m_range: (0.0, MAX_ZOOM_EXPONENT),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.m_range;
        if !(0.0 <= lo && lo <= hi && hi <= MAX_ZOOM_EXPONENT) {
            return Err(Error::InvalidArgument(format!(
                "m_range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= {MAX_ZOOM_EXPONENT}"
            )));
        }
        let (a, b) = self.content_fraction;
        if !(0.0 < a && a <= b && b <= 1.0) {
            return Err(Error::InvalidArgument(format!("content_fraction ({a}, {b}) must lie in (0, 1]")));
        }
        if self.resolution < 32 {
            return Err(Error::InvalidArgument(format!("resolution {} below 32", self.resolution)));
        }
        Ok(())
    }

    /// Even indices are downsampled pairs and odd ones upsampled, so `n` pairs
    /// hold `ceil(n / 2)` of the former.
    pub fn provenance(index: usize) -> Provenance {
        if index % 2 == 0 {
            Provenance::SyntheticDown
        } else {
            Provenance::SyntheticUp
        }
    }

    fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }

    /// The zoom exponent of pair `index`.
    pub fn zoom_exponent(&self, index: usize) -> f64 {
        let (lo, hi) = self.m_range;
        self.rng(index).gen_range(lo..=hi)
    }
}

/// Resizes `img` so its longer side is `side`, keeping the aspect ratio.
fn fit_longer_side(img: &Image, side: usize) -> Result<Image> {
    let factor = side as f64 / img.height().max(img.width()) as f64;
    let h = scaled_dim(img.height(), factor, Rounding::HalfUp).clamp(1, side);
    let w = scaled_dim(img.width(), factor, Rounding::HalfUp).clamp(1, side);
    img.resize(h, w)
}

/// Scales a background to cover `size x size`, then center-crops.
fn cover_square(img: &Image, size: usize) -> Result<Image> {
    let factor = size as f64 / img.height().min(img.width()) as f64;
    let h = scaled_dim(img.height(), factor, Rounding::HalfUp).max(size);
    let w = scaled_dim(img.width(), factor, Rounding::HalfUp).max(size);
    let big = img.resize(h, w)?;
    let (r0, c0) = ((h - size) / 2, (w - size) / 2);
    Ok(Image::from_fn(size, size, |y, x| {
        [big.get(0, r0 + y, c0 + x), big.get(1, r0 + y, c0 + x), big.get(2, r0 + y, c0 + x)]
    }))
}

/// Builds pair `index` of a dataset. Pure in `(cfg, index)` and the corpora.
pub fn generate_pair(
    content: &dyn ImageCorpus,
    backgrounds: &dyn ImageCorpus,
    cfg: &GeneratorConfig,
    index: usize,
) -> Result<SyntheticPair> {
    if content.is_empty() || backgrounds.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let mut rng = cfg.rng(index);
    let (lo, hi) = cfg.m_range;
    let m = rng.gen_range(lo..=hi);
    // Corpora are sampled with replacement.
    let item = content.image(rng.gen_range(0..content.len()))?;
    let bg1 = cover_square(&backgrounds.image(rng.gen_range(0..backgrounds.len()))?, cfg.resolution)?;
    let bg2 = cover_square(&backgrounds.image(rng.gen_range(0..backgrounds.len()))?, cfg.resolution)?;
    let (a, b) = cfg.content_fraction;
    let side = scaled_dim(cfg.resolution, rng.gen_range(a..=b), Rounding::HalfUp).clamp(1, cfg.resolution);
    let item = fit_longer_side(&item, side)?;
    let seed = rng.gen();
    match GeneratorConfig::provenance(index) {
        Provenance::SyntheticDown => make_pair_downsample(&item, &bg1, &bg2, m, seed),
        _ => make_pair_upsample(&item, &bg1, &bg2, m, seed),
    }
}

/// Writes `n` pairs as PNG files plus [`MANIFEST_FILE`] into `out_dir` and
/// returns the records.
pub fn generate_dataset(
    content: &dyn ImageCorpus,
    backgrounds: &dyn ImageCorpus,
    n: usize,
    cfg: &GeneratorConfig,
    out_dir: &Path,
) -> Result<Vec<PairRecord>> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let pair = generate_pair(content, backgrounds, cfg, i)?;
        let path1 = PathBuf::from(format!("pair_{i:06}_1.png"));
        let path2 = PathBuf::from(format!("pair_{i:06}_2.png"));
        pair.image1.save(out_dir.join(&path1))?;
        pair.image2.save(out_dir.join(&path2))?;
        records.push(PairRecord {
            path1,
            path2,
            gt_ratio: pair.gt_ratio,
            provenance: pair.provenance,
            placement: Some(pair.placement),
        });
    }
    write_manifest(&out_dir.join(MANIFEST_FILE), &records)?;
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[PairRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// Pairs rendered on demand, never touching the disk.
pub struct SyntheticSource<C, B> {
    pub content: C,
    pub backgrounds: B,
    pub config: GeneratorConfig,
    pub count: usize,
}

impl<C: ImageCorpus, B: ImageCorpus> SyntheticSource<C, B> {
    pub fn new(content: C, backgrounds: B, config: GeneratorConfig, count: usize) -> Result<Self> {
        config.validate()?;
        if content.is_empty() || backgrounds.is_empty() {
            return Err(Error::InvalidArgument("empty corpus".into()));
        }
        Ok(Self {
            content,
            backgrounds,
            config,
            count,
        })
    }

    pub fn pair(&self, index: usize) -> Result<SyntheticPair> {
        if index >= self.count {
            return Err(Error::InvalidArgument(format!("pair {index} out of range")));
        }
        generate_pair(&self.content, &self.backgrounds, &self.config, index)
    }
}

impl<C: ImageCorpus, B: ImageCorpus> PairSource for SyntheticSource<C, B> {
    fn len(&self) -> usize {
        self.count
    }

    fn sample(&self, index: usize) -> Result<TrainSample> {
        let p = self.pair(index)?;
        TrainSample::new(p.image1, p.image2, p.gt_ratio)
    }

    fn gt_ratio(&self, index: usize) -> Result<ScaleRatio> {
        if index >= self.count {
            return Err(Error::InvalidArgument(format!("pair {index} out of range")));
        }
        ScaleRatio::from_value(self.config.zoom_exponent(index).exp2())
    }
}

/// Pairs listed in a manifest, loaded lazily.
#[derive(Debug, Clone)]
pub struct ManifestSource {
    root: PathBuf,
    records: Vec<PairRecord>,
}

impl ManifestSource {
    pub fn open(manifest: &Path) -> Result<Self> {
        let records = read_manifest(manifest)?;
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, records })
    }

    pub fn from_records(root: PathBuf, records: Vec<PairRecord>) -> Self {
        Self { root, records }
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    pub fn load_pair(&self, index: usize) -> Result<(Image, Image)> {
        let r = self
            .records
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("pair {index} out of range")))?;
        Ok((Image::load(self.resolve(&r.path1))?, Image::load(self.resolve(&r.path2))?))
    }
}

impl PairSource for ManifestSource {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn sample(&self, index: usize) -> Result<TrainSample> {
        let (a, b) = self.load_pair(index)?;
        TrainSample::new(a, b, self.records[index].gt_ratio)
    }

    fn gt_ratio(&self, index: usize) -> Result<ScaleRatio> {
        self.records
            .get(index)
            .map(|r| r.gt_ratio)
            .ok_or_else(|| Error::InvalidArgument(format!("pair {index} out of range")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ProceduralCorpus;

    fn corpora() -> (ProceduralCorpus, ProceduralCorpus) {
        (ProceduralCorpus::blobs(5, 64, 1), ProceduralCorpus::clouds(5, 64, 2))
    }

    fn small_cfg() -> GeneratorConfig {
        GeneratorConfig {
            resolution: 64,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn two_pairs_one_of_each_kind() {
        let (c, b) = corpora();
        let dir = tempfile::tempdir().unwrap();
        let recs = generate_dataset(&c, &b, 2, &small_cfg(), dir.path()).unwrap();
        assert_eq!(recs[0].provenance, Provenance::SyntheticDown);
        assert_eq!(recs[1].provenance, Provenance::SyntheticUp);
        for r in &recs {
            assert!(dir.path().join(&r.path1).exists());
        }
    }

    #[test]
    fn provenance_counts() {
        for n in 0..9 {
            let down = (0..n).filter(|&i| GeneratorConfig::provenance(i) == Provenance::SyntheticDown).count();
            assert_eq!(down, n.div_ceil(2));
            assert_eq!(n - down, n / 2);
        }
    }

    #[test]
    fn ratios_within_range() {
        let (c, b) = corpora();
        let src = SyntheticSource::new(c, b, small_cfg(), 40).unwrap();
        for i in 0..40 {
            let s = src.gt_ratio(i).unwrap().value();
            assert!((1.0..=128.0).contains(&s));
            assert_eq!(src.pair(i).unwrap().gt_ratio, src.gt_ratio(i).unwrap());
        }
    }

    #[test]
    fn byte_identical_manifest_on_rerun() {
        let (c, b) = corpora();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_dataset(&c, &b, 4, &small_cfg(), d1.path()).unwrap();
        generate_dataset(&c, &b, 4, &small_cfg(), d2.path()).unwrap();
        let m1 = std::fs::read(d1.path().join(MANIFEST_FILE)).unwrap();
        let m2 = std::fs::read(d2.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m1, m2);
        let p1 = std::fs::read(d1.path().join("pair_000003_2.png")).unwrap();
        let p2 = std::fs::read(d2.path().join("pair_000003_2.png")).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn manifest_round_trip_and_source() {
        let (c, b) = corpora();
        let dir = tempfile::tempdir().unwrap();
        let recs = generate_dataset(&c, &b, 3, &small_cfg(), dir.path()).unwrap();
        let src = ManifestSource::open(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(src.records(), recs.as_slice());
        let s = src.sample(1).unwrap();
        assert_eq!(s.gt_ratio, recs[1].gt_ratio);
        assert_eq!(s.image1.height(), 64);
    }

    #[test]
    fn malformed_manifest_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "{\"path1\":\"a\",\"path2\":\"b\",\"gt_ratio\":2.0,\"provenance\":\"annotated\"}\nnot json\n")
            .unwrap();
        match read_manifest(&path) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_m_range() {
        let cfg = GeneratorConfig {
            m_range: (0.0, 8.0),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
