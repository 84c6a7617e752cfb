//! Content and background image collections.

use scalenet_core::error::{Error, Result};
use scalenet_core::image::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// An indexed collection of images.
pub trait ImageCorpus: Sync {
    fn len(&self) -> usize;

    fn image(&self, index: usize) -> Result<Image>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Short description recorded in reproducibility logs.
    fn describe(&self) -> String;
}

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "ppm"];

/// Every image file directly inside a directory, in file-name order.
#[derive(Debug, Clone)]
pub struct DirectoryCorpus {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl DirectoryCorpus {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let entries = std::fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
        let mut files = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&root, e))?.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase())
                .unwrap_or_default();
            if path.is_file() && IMAGE_EXTENSIONS.contains(&ext.as_str()) {
                files.push(path);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::InvalidArgument(format!("no images in {}", root.display())));
        }
        Ok(Self { root, files })
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

impl ImageCorpus for DirectoryCorpus {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn image(&self, index: usize) -> Result<Image> {
        let path = self
            .files
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("corpus index {index} out of range")))?;
        Image::load(path)
    }

    fn describe(&self) -> String {
        format!("directory:{} ({} images)", self.root.display(), self.files.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProceduralKind {
    /// Overlapping flat-colored discs on a flat backdrop. Rich in corners and
    /// blobs at a range of scales.
    Blobs,
    /// Smooth low-frequency color fields.
    Clouds,
}

/// Images rendered on demand from `(seed, index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProceduralCorpus {
    pub kind: ProceduralKind,
    pub count: usize,
    pub size: usize,
    pub seed: u64,
}

impl ProceduralCorpus {
    pub fn blobs(count: usize, size: usize, seed: u64) -> Self {
        Self {
            kind: ProceduralKind::Blobs,
            count,
            size,
            seed,
        }
    }

    pub fn clouds(count: usize, size: usize, seed: u64) -> Self {
        Self {
            kind: ProceduralKind::Clouds,
            count,
            size,
            seed,
        }
    }
}

impl ImageCorpus for ProceduralCorpus {
    fn len(&self) -> usize {
        self.count
    }

    fn image(&self, index: usize) -> Result<Image> {
        if index >= self.count {
            return Err(Error::InvalidArgument(format!("corpus index {index} out of range")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        Ok(match self.kind {
            ProceduralKind::Blobs => render_blobs(self.size, self.size, &mut rng),
            ProceduralKind::Clouds => render_clouds(self.size, self.size, &mut rng),
        })
    }

    fn describe(&self) -> String {
        format!("{:?}(count={}, size={}, seed={})", self.kind, self.count, self.size, self.seed).to_lowercase()
    }
}

/// About `h * w / 30` random discs with radii between 1.5% and 4% of the
/// shorter side.
pub fn render_blobs(height: usize, width: usize, rng: &mut impl Rng) -> Image {
    let base: [f32; 3] = rng.gen();
    let mut img = Image::constant(height, width, base);
    let side = height.min(width) as f64;
    let (rmin, rmax) = ((0.015 * side).max(1.0), (0.04 * side).max(1.5));
    let count = height * width / 30;
    for _ in 0..count {
        let r = rng.gen_range(rmin..rmax);
        let cy = rng.gen_range(0.0..height as f64);
        let cx = rng.gen_range(0.0..width as f64);
        let color: [f32; 3] = rng.gen();
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as usize).min(height);
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as usize).min(width);
        for y in y0..y1 {
            let dy = y as f64 + 0.5 - cy;
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - cx;
                if dx * dx + dy * dy < r * r {
                    for (c, &v) in color.iter().enumerate() {
                        img.set(c, y, x, v);
                    }
                }
            }
        }
    }
    img
}

/// A 5x5 random grid per channel, bilinearly enlarged and stretched to
/// `[0.2, 0.8]`.
pub fn render_clouds(height: usize, width: usize, rng: &mut impl Rng) -> Image {
    let grid = Image::from_fn(5, 5, |_, _| rng.gen());
    let big = grid.resize(height, width).expect("nonempty target");
    let (lo, hi) = big
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-6);
    let data = big.data().iter().map(|&v| 0.2 + 0.6 * (v - lo) / span).collect();
    Image::from_planar(height, width, data).expect("values in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn procedural_is_deterministic_per_index() {
        let c = ProceduralCorpus::blobs(4, 48, 7);
        assert_eq!(c.image(2).unwrap(), c.image(2).unwrap());
        assert_ne!(c.image(1).unwrap(), c.image(2).unwrap());
        assert!(c.image(4).is_err());
    }

    #[test]
    fn clouds_stay_in_range() {
        let c = ProceduralCorpus::clouds(1, 40, 3);
        let img = c.image(0).unwrap();
        assert!(img.data().iter().all(|&v| (0.2 - 1e-6..=0.8 + 1e-6).contains(&v)));
    }

    #[test]
    fn directory_corpus_lists_images_in_order() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.png", "a.png"] {
            Image::constant(8, 8, [0.5; 3]).save(dir.path().join(name)).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let c = DirectoryCorpus::open(dir.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.files()[0].ends_with("a.png"));
        assert_eq!(c.image(1).unwrap().height(), 8);
        assert!(DirectoryCorpus::open(tempfile::tempdir().unwrap().path()).is_err());
    }
}
