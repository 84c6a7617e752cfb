//! Pluggable feature extraction and matching.

use super::sift::{detect_and_describe, Keypoint, SiftConfig};
use scalenet_core::error::{Error, Result};
use scalenet_core::image::Image;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// A correspondence between `keypoints1[index1]` and `keypoints2[index2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub index1: usize,
    pub index2: usize,
    /// Descriptor distance; lower is better.
    pub score: f64,
}

/// Extractor plus matcher. Implementations must be usable from several
/// threads at once.
pub trait MatcherAdapter: Sync {
    fn extractor_id(&self) -> String;
    fn matcher_id(&self) -> String;
    fn ratio_test_threshold(&self) -> f64;
    fn extract(&self, img: &Image) -> Result<Vec<Keypoint>>;
    /// Matches descriptors; every index appears at most once per side.
    fn match_keypoints(&self, kps1: &[Keypoint], kps2: &[Keypoint]) -> Result<Vec<Match>>;
}

/// Built-in DoG/orientation-histogram features with mutual nearest
/// neighbors and a ratio test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiftAdapter {
    pub sift: SiftConfig,
    pub ratio_test_threshold: f64,
}

impl Default for SiftAdapter {
    fn default() -> Self {
        Self {
            sift: SiftConfig::default(),
            ratio_test_threshold: 0.8,
        }
    }
}

impl SiftAdapter {
    pub fn validate(&self) -> Result<()> {
        let c = &self.sift;
        if !(self.ratio_test_threshold > 0.0 && self.ratio_test_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ratio test threshold {} must lie in (0, 1]",
                self.ratio_test_threshold
            )));
        }
        if c.max_keypoints == 0 || c.intervals == 0 || !(c.sigma > 0.0) || !(c.edge_threshold > 1.0) || c.contrast_threshold < 0.0
        {
            return Err(Error::InvalidArgument(format!("invalid detector settings {c:?}")));
        }
        Ok(())
    }
}

impl MatcherAdapter for SiftAdapter {
    fn extractor_id(&self) -> String {
        format!("dog-sift-{}", self.sift.max_keypoints)
    }

    fn matcher_id(&self) -> String {
        format!("mnn-ratio-{}", self.ratio_test_threshold)
    }

    fn ratio_test_threshold(&self) -> f64 {
        self.ratio_test_threshold
    }

    fn extract(&self, img: &Image) -> Result<Vec<Keypoint>> {
        self.validate()?;
        Ok(detect_and_describe(img, &self.sift))
    }

    fn match_keypoints(&self, kps1: &[Keypoint], kps2: &[Keypoint]) -> Result<Vec<Match>> {
        mutual_nn_ratio(kps1, kps2, self.ratio_test_threshold)
    }
}

fn descriptor_matrix(kps: &[Keypoint], dim: usize) -> Result<Array2<f32>> {
    let mut m = Array2::zeros((kps.len(), dim));
    for (i, k) in kps.iter().enumerate() {
        if k.descriptor.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "descriptor {i} has length {}, expected {dim}",
                k.descriptor.len()
            )));
        }
        m.row_mut(i).assign(&ndarray::ArrayView1::from(&k.descriptor[..]));
    }
    Ok(m)
}

fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| (x - y) * (x - y)).sum();
    for (xa, xb) in ca.zip(cb) {
        for k in 0..8 {
            let t = xa[k] - xb[k];
            acc[k] += t * t;
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Best and second-best squared distance per row, ties to the lower index.
fn two_nearest(d: &Array2<f32>) -> Vec<(usize, f32, f32)> {
    d.rows()
        .into_iter()
        .map(|row| {
            let (mut bi, mut b1, mut b2) = (0, f32::INFINITY, f32::INFINITY);
            for (j, &v) in row.iter().enumerate() {
                if v < b1 {
                    (b2, b1, bi) = (b1, v, j);
                } else if v < b2 {
                    b2 = v;
                }
            }
            (bi, b1, b2)
        })
        .collect()
}

/// Mutual nearest neighbors that also pass the ratio test in both directions,
/// so swapping the inputs swaps the output exactly. With a single candidate
/// on the other side the ratio test is vacuous.
pub fn mutual_nn_ratio(kps1: &[Keypoint], kps2: &[Keypoint], ratio: f64) -> Result<Vec<Match>> {
    if kps1.is_empty() || kps2.is_empty() {
        return Ok(Vec::new());
    }
    let dim = kps1[0].descriptor.len();
    let a = descriptor_matrix(kps1, dim)?;
    let b = descriptor_matrix(kps2, dim)?;
    // Squared differences rather than |a|^2 + |b|^2 - 2ab: the result is then
    // bitwise identical under swapping the inputs.
    let mut d = Array2::<f32>::zeros((kps1.len(), kps2.len()));
    for (i, ra) in a.rows().into_iter().enumerate() {
        let ra = ra.as_slice().expect("standard layout");
        for (j, rb) in b.rows().into_iter().enumerate() {
            let rb = rb.as_slice().expect("standard layout");
            d[(i, j)] = squared_distance(ra, rb);
        }
    }
    let fwd = two_nearest(&d);
    let bwd = two_nearest(&d.t().to_owned());
    let r2 = (ratio * ratio) as f32;
    let mut out = Vec::new();
    for (i, &(j, best, second)) in fwd.iter().enumerate() {
        let (back, _, second_back) = bwd[j];
        if back != i {
            continue;
        }
        if best < r2 * second && best < r2 * second_back {
            out.push(Match {
                index1: i,
                index2: j,
                score: (best as f64).sqrt(),
            });
        }
    }
    Ok(out)
}
