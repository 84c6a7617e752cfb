//! Estimate the ratio, resize both images toward a common scale, match, and
//! map keypoints back to the original frames.

use super::matcher::{Match, MatcherAdapter};
use super::sift::Keypoint;
use scalenet_core::error::{Error, Result};
use scalenet_core::image::{scaled_dim, Image, Rounding, MIN_SIDE};
use scalenet_net::ScaleNet;
use scalenet_core::nn::Real;
use scalenet_core::ratio::ScaleRatio;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Largest side a resized image may reach when the minimum-side clamp
/// enlarges both factors.
pub const MAX_RESIZED_SIDE: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResizeOptions {
    /// Use `r1 = s^-0.5, r2 = s^0.5` instead of `r1 = s^0.5, r2 = s^-0.5`.
    pub flip: bool,
    pub min_side: usize,
    pub max_side: usize,
    pub rounding: Rounding,
}

impl Default for ResizeOptions {
    fn default() -> Self {
        Self {
            flip: false,
            min_side: MIN_SIDE,
            max_side: MAX_RESIZED_SIDE,
            rounding: Rounding::HalfUp,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResizedPair {
    pub image1: Image,
    pub image2: Image,
    /// Nominal factors `(r1, r2)`.
    pub factors: (f64, f64),
    /// Realized `[x, y]` factors after rounding the dimensions.
    pub axis_factors1: [f64; 2],
    pub axis_factors2: [f64; 2],
}

/// Split factors for `s`: `r1 / r2 = s`, each the square root of the total.
pub fn split_factors(s: ScaleRatio, flip: bool) -> (f64, f64) {
    let half = 0.5 * s.log2();
    let (a, b) = (half.exp2(), (-half).exp2());
    if flip {
        (b, a)
    } else {
        (a, b)
    }
}

/// Resizes `i1` by `r1` and `i2` by `r2` (see [`split_factors`]). When a
/// side would drop below `opts.min_side`, both factors are enlarged by the
/// same amount, which keeps `r1 / r2`. Fails if that pushes a side past
/// `opts.max_side`.
pub fn resize_pair(i1: &Image, i2: &Image, s: ScaleRatio, opts: &ResizeOptions) -> Result<ResizedPair> {
    let (mut r1, mut r2) = split_factors(s.clamped(), opts.flip);
    let sides = [(1, i1, r1), (2, i2, r2)];
    let dims = |r1: f64, r2: f64| {
        [(i1, r1), (i2, r2)].map(|(img, r)| {
            (
                scaled_dim(img.height(), r, opts.rounding),
                scaled_dim(img.width(), r, opts.rounding),
            )
        })
    };
    let too_small = |d: [(usize, usize); 2]| d.iter().any(|&(h, w)| h.min(w) < opts.min_side);
    if too_small(dims(r1, r2)) {
        let boost = sides
            .iter()
            .map(|&(_, img, r)| opts.min_side as f64 / (img.height().min(img.width()) as f64 * r))
            .fold(1.0, f64::max);
        r1 *= boost;
        r2 *= boost;
        // Rounding can still land one pixel short.
        while too_small(dims(r1, r2)) {
            r1 *= 1.0 + 1e-6;
            r2 *= 1.0 + 1e-6;
        }
        let d = dims(r1, r2);
        for (k, &(side, img, r)) in sides.iter().enumerate() {
            if d[k].0.max(d[k].1) > opts.max_side {
                return Err(Error::ResizeTooSmall {
                    side,
                    factor: r,
                    dim: scaled_dim(img.height().min(img.width()), r, opts.rounding),
                    min: opts.min_side,
                });
            }
        }
    }
    let [(h1, w1), (h2, w2)] = dims(r1, r2);
    let image1 = i1.resize(h1, w1)?;
    let image2 = i2.resize(h2, w2)?;
    Ok(ResizedPair {
        axis_factors1: [w1 as f64 / i1.width() as f64, h1 as f64 / i1.height() as f64],
        axis_factors2: [w2 as f64 / i2.width() as f64, h2 as f64 / i2.height() as f64],
        image1,
        image2,
        factors: (r1, r2),
    })
}

/// Maps keypoints detected in an image resized by `r` back to the original
/// frame.
pub fn restore_keypoints(kps: &[Keypoint], r: f64) -> Result<Vec<Keypoint>> {
    restore_keypoints_axes(kps, [r, r])
}

/// [`restore_keypoints`] with separate `x` and `y` factors, the exact inverse
/// of a resize whose dimensions were rounded.
pub fn restore_keypoints_axes(kps: &[Keypoint], r: [f64; 2]) -> Result<Vec<Keypoint>> {
    if !r.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(Error::InvalidArgument(format!("restore factors {r:?} must be positive")));
    }
    Ok(kps
        .iter()
        .map(|k| Keypoint {
            x: k.x / r[0],
            y: k.y / r[1],
            size: k.size / (r[0] * r[1]).sqrt(),
            ..k.clone()
        })
        .collect())
}

/// Source of the ratio used to resize a pair.
pub trait ScaleEstimator: Sync {
    fn id(&self) -> String;
    fn estimate(&self, i1: &Image, i2: &Image) -> Result<ScaleRatio>;
}

impl<T: Real> ScaleEstimator for ScaleNet<T> {
    fn id(&self) -> String {
        "scale-net".into()
    }

    fn estimate(&self, i1: &Image, i2: &Image) -> Result<ScaleRatio> {
        ScaleNet::estimate(self, i1, i2)
    }
}

/// Returns the same ratio for every pair: the identity baseline or a
/// ground-truth oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedRatio {
    pub ratio: ScaleRatio,
    pub label: String,
}

impl FixedRatio {
    pub fn unit() -> Self {
        Self {
            ratio: ScaleRatio::ONE,
            label: "unit".into(),
        }
    }

    pub fn ground_truth(ratio: ScaleRatio) -> Self {
        Self {
            ratio,
            label: "ground-truth".into(),
        }
    }
}

impl ScaleEstimator for FixedRatio {
    fn id(&self) -> String {
        self.label.clone()
    }

    fn estimate(&self, _: &Image, _: &Image) -> Result<ScaleRatio> {
        Ok(self.ratio)
    }
}

/// Matches with keypoints in the coordinates of the original images.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub keypoints1: Vec<Keypoint>,
    pub keypoints2: Vec<Keypoint>,
    pub pairs: Vec<Match>,
    pub resize_factors: (f64, f64),
    pub ratio: ScaleRatio,
    pub estimator_id: String,
    pub extractor_id: String,
    pub matcher_id: String,
    /// Why the set is empty, when it is.
    pub diagnostic: Option<String>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Matched coordinates `(image 1, image 2)`.
    pub fn correspondences(&self) -> Vec<([f64; 2], [f64; 2])> {
        self.pairs
            .iter()
            .map(|m| {
                let (a, b) = (&self.keypoints1[m.index1], &self.keypoints2[m.index2]);
                ([a.x, a.y], [b.x, b.y])
            })
            .collect()
    }

    /// Matches whose transfer error under `error` is defined and at most
    /// `threshold`.
    pub fn count_inliers(&self, error: impl Fn([f64; 2], [f64; 2]) -> Option<f64>, threshold: f64) -> usize {
        self.correspondences()
            .into_iter()
            .filter(|&(a, b)| error(a, b).is_some_and(|e| e <= threshold))
            .count()
    }

    /// Dump lines: a commented header with the factors and identities, then
    /// `x1,y1,x2,y2,score` rows.
    pub fn to_dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# resize_factors {} {}", self.resize_factors.0, self.resize_factors.1);
        let _ = writeln!(s, "# ratio {}", self.ratio.value());
        let _ = writeln!(s, "# estimator {}", self.estimator_id);
        let _ = writeln!(s, "# extractor {}", self.extractor_id);
        let _ = writeln!(s, "# matcher {}", self.matcher_id);
        let _ = writeln!(s, "# keypoints {} {}", self.keypoints1.len(), self.keypoints2.len());
        if let Some(d) = &self.diagnostic {
            let _ = writeln!(s, "# diagnostic {}", d.replace('\n', " "));
        }
        s.push_str("x1,y1,x2,y2,score\n");
        for (m, (a, b)) in self.pairs.iter().zip(self.correspondences()) {
            let _ = writeln!(s, "{},{},{},{},{}", a[0], a[1], b[0], b[1], m.score);
        }
        s
    }

    pub fn write_dump(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_dump()).map_err(|e| Error::io(path, e))
    }
}

/// A parsed match dump.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchDump {
    /// Header entries in file order.
    pub header: Vec<(String, String)>,
    /// `(x1, y1, x2, y2, score)`.
    pub rows: Vec<[f64; 5]>,
}

impl MatchDump {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn correspondences(&self) -> Vec<([f64; 2], [f64; 2])> {
        self.rows.iter().map(|r| ([r[0], r[1]], [r[2], r[3]])).collect()
    }
}

pub fn read_match_dump(path: &Path) -> Result<MatchDump> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut dump = MatchDump::default();
    let mut seen_columns = false;
    for (i, line) in text.lines().enumerate() {
        let bad = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if let Some(h) = line.strip_prefix('#') {
            let h = h.trim();
            let (k, v) = h.split_once(' ').unwrap_or((h, ""));
            dump.header.push((k.to_string(), v.to_string()));
        } else if !seen_columns {
            if line.trim() != "x1,y1,x2,y2,score" {
                return Err(bad(format!("expected column header, got {line:?}")));
            }
            seen_columns = true;
        } else if !line.trim().is_empty() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}"))))
                .collect::<Result<_>>()?;
            let row: [f64; 5] = vals
                .try_into()
                .map_err(|v: Vec<f64>| bad(format!("expected 5 columns, got {}", v.len())))?;
            dump.rows.push(row);
        }
    }
    if !seen_columns {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: text.lines().count(),
            msg: "missing column header".into(),
        });
    }
    Ok(dump)
}

fn run(
    i1: &Image,
    i2: &Image,
    s: ScaleRatio,
    estimator_id: String,
    adapter: &dyn MatcherAdapter,
    opts: &ResizeOptions,
) -> Result<MatchSet> {
    let resized = resize_pair(i1, i2, s, opts)?;
    let k1 = adapter.extract(&resized.image1)?;
    let k2 = adapter.extract(&resized.image2)?;
    let mut set = MatchSet {
        keypoints1: restore_keypoints_axes(&k1, resized.axis_factors1)?,
        keypoints2: restore_keypoints_axes(&k2, resized.axis_factors2)?,
        pairs: Vec::new(),
        resize_factors: resized.factors,
        ratio: s,
        estimator_id,
        extractor_id: adapter.extractor_id(),
        matcher_id: adapter.matcher_id(),
        diagnostic: None,
    };
    if k1.is_empty() || k2.is_empty() {
        set.diagnostic = Some(format!("no keypoints: {} in image 1, {} in image 2", k1.len(), k2.len()));
        return Ok(set);
    }
    set.pairs = adapter.match_keypoints(&k1, &k2)?;
    if set.pairs.is_empty() {
        set.diagnostic = Some("no match survived the mutual and ratio checks".into());
    }
    Ok(set)
}

/// Estimate, resize, extract, match, restore.
pub fn match_with_sdaim(
    i1: &Image,
    i2: &Image,
    estimator: &dyn ScaleEstimator,
    adapter: &dyn MatcherAdapter,
    opts: &ResizeOptions,
) -> Result<MatchSet> {
    let s = estimator.estimate(i1, i2)?.clamped();
    run(i1, i2, s, estimator.id(), adapter, opts)
}

/// Matching at the original sizes.
pub fn match_baseline(i1: &Image, i2: &Image, adapter: &dyn MatcherAdapter) -> Result<MatchSet> {
    run(i1, i2, ScaleRatio::ONE, "none".into(), adapter, &ResizeOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(v: f64) -> ScaleRatio {
        ScaleRatio::from_value(v).unwrap()
    }

    fn gray(h: usize, w: usize) -> Image {
        Image::constant(h, w, [0.5; 3])
    }

    #[test]
    fn unit_ratio_keeps_images() {
        let a = Image::from_fn(40, 50, |y, x| [(x as f32 / 50.0), (y as f32 / 40.0), 0.2]);
        let p = resize_pair(&a, &a, ScaleRatio::ONE, &ResizeOptions::default()).unwrap();
        assert_eq!(p.factors, (1.0, 1.0));
        assert_eq!(p.image1, a);
        assert_eq!(p.image2, a);
    }

    #[test]
    fn ratio_four_doubles_and_halves() {
        let p = resize_pair(&gray(640, 640), &gray(640, 640), r(4.0), &ResizeOptions::default()).unwrap();
        assert_eq!(p.factors, (2.0, 0.5));
        assert_eq!((p.image1.height(), p.image1.width()), (1280, 1280));
        assert_eq!((p.image2.height(), p.image2.width()), (320, 320));
        let f = resize_pair(
            &gray(640, 640),
            &gray(640, 640),
            r(4.0),
            &ResizeOptions {
                flip: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(f.factors, (0.5, 2.0));
    }

    #[test]
    fn ratio_two_rounds_half_up() {
        let p = resize_pair(&gray(100, 150), &gray(100, 150), r(2.0), &ResizeOptions::default()).unwrap();
        assert_eq!((p.image1.height(), p.image1.width()), (141, 212));
        assert_eq!((p.image2.height(), p.image2.width()), (71, 106));
    }

    #[test]
    fn factor_quotient_is_the_ratio() {
        for v in [0.01, 0.3, 1.0, 2.5, 8.0, 400.0] {
            let (a, b) = split_factors(r(v), false);
            assert!((a / b / v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn small_side_is_clamped_jointly() {
        let p = resize_pair(&gray(64, 64), &gray(64, 64), r(16.0), &ResizeOptions::default()).unwrap();
        // 64 / 4 = 16 would be too small; both factors double.
        assert_eq!(p.image2.height(), 32);
        assert_eq!(p.image1.height(), 512);
        assert!((p.factors.0 / p.factors.1 - 16.0).abs() < 1e-5);
        let e = resize_pair(&gray(64, 64), &gray(64, 64), r(512.0), &ResizeOptions {
            max_side: 1024,
            ..Default::default()
        });
        assert!(matches!(e, Err(Error::ResizeTooSmall { .. })));
    }

    #[test]
    fn restore_examples() {
        let k = Keypoint {
            x: 100.0,
            y: 50.0,
            size: 4.0,
            angle: 0.0,
            score: 1.0,
            descriptor: vec![],
        };
        assert_eq!(restore_keypoints(std::slice::from_ref(&k), 1.0).unwrap()[0], k);
        let back = &restore_keypoints(&[k], 2.0).unwrap()[0];
        assert_eq!((back.x, back.y), (50.0, 25.0));
        assert!(restore_keypoints(&[], 0.0).is_err());
    }

    #[test]
    fn grid_round_trip() {
        for (h, w, s) in [(100, 150, 2.0), (97, 131, 0.3), (160, 160, 8.0), (45, 77, 1.7)] {
            let img = gray(h, w);
            let p = resize_pair(&img, &img, r(s), &ResizeOptions::default()).unwrap();
            for (axes, nominal, out) in [
                (p.axis_factors1, p.factors.0, &p.image1),
                (p.axis_factors2, p.factors.1, &p.image2),
            ] {
                // Forward map of the resizer: continuous coordinates scale by the
                // realized dimension ratio.
                let mut grid = Vec::new();
                for i in 0..=10 {
                    for j in 0..=10 {
                        let (x, y) = (j as f64 * w as f64 / 10.0, i as f64 * h as f64 / 10.0);
                        grid.push((x, y, x * out.width() as f64 / w as f64, y * out.height() as f64 / h as f64));
                    }
                }
                let kps: Vec<Keypoint> = grid
                    .iter()
                    .map(|g| Keypoint {
                        x: g.2,
                        y: g.3,
                        size: 1.0,
                        angle: 0.0,
                        score: 0.0,
                        descriptor: vec![],
                    })
                    .collect();
                let mut restored_sets = vec![restore_keypoints_axes(&kps, axes).unwrap()];
                // The nominal factor is off by at most half a resized pixel, i.e.
                // 0.5 / r original pixels.
                if nominal >= 1.0 {
                    restored_sets.push(restore_keypoints(&kps, nominal).unwrap());
                }
                for restored in restored_sets {
                    let dev = grid
                        .iter()
                        .zip(&restored)
                        .map(|(g, k)| (g.0 - k.x).abs().max((g.1 - k.y).abs()))
                        .fold(0.0, f64::max);
                    assert!(dev < 0.5, "{h}x{w} s={s}: deviation {dev}");
                }
            }
        }
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let kp = |x: f64, y: f64| Keypoint {
            x,
            y,
            size: 1.0,
            angle: 0.0,
            score: 0.0,
            descriptor: vec![],
        };
        let set = MatchSet {
            keypoints1: vec![kp(1.5, 2.25), kp(3.0, 4.0)],
            keypoints2: vec![kp(10.0, 20.0)],
            pairs: vec![Match {
                index1: 1,
                index2: 0,
                score: 0.125,
            }],
            resize_factors: (2.0, 0.5),
            ratio: r(4.0),
            estimator_id: "ground-truth".into(),
            extractor_id: "x".into(),
            matcher_id: "y".into(),
            diagnostic: None,
        };
        set.write_dump(&path).unwrap();
        let d = read_match_dump(&path).unwrap();
        assert_eq!(d.rows, vec![[3.0, 4.0, 10.0, 20.0, 0.125]]);
        assert_eq!(d.get("resize_factors"), Some("2 0.5"));
        assert_eq!(d.get("estimator"), Some("ground-truth"));
        std::fs::write(&path, "x1,y1,x2,y2,score\n1,2,3\n").unwrap();
        assert!(read_match_dump(&path).is_err());
    }
}
