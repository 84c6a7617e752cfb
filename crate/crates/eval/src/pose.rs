//! Relative pose from correspondences and the pose error metric.

use super::essential::{decompose_essential, eight_point_weighted, five_point};
use scalenet_core::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Error assigned to a failed pose estimate.
pub const FAILURE_ERROR_DEG: f64 = 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    /// Sampson distance threshold in pixels.
    pub reproj_threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            reproj_threshold: 1.5,
            confidence: 0.999,
            max_iterations: 100_000,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reproj_threshold > 0.0 && self.confidence > 0.0 && self.confidence < 1.0 && self.max_iterations > 0) {
            return Err(Error::InvalidArgument(format!("invalid RANSAC settings {self:?}")));
        }
        Ok(())
    }
}

/// Motion taking camera-1 coordinates to camera-2 coordinates,
/// `x2 = rotation * x1 + translation`, with a unit-length translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: RelativePose,
    pub essential: Matrix3<f64>,
    pub inliers: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseFailure {
    #[error("{0} correspondences, at least 5 are needed")]
    TooFewMatches(usize),
    #[error("no essential matrix supported by the correspondences")]
    NoModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub rotation_error: f64,
    pub translation_error: f64,
    pub fpe: f64,
}

fn normalize(k_inv: &Matrix3<f64>, p: &[f64; 2]) -> [f64; 2] {
    let q = k_inv * Vector3::new(p[0], p[1], 1.0);
    [q.x / q.z, q.y / q.z]
}

/// Squared Sampson distance and the squared gradient norm it divides by.
fn sampson_parts(f: &Matrix3<f64>, a: &[f64; 2], b: &[f64; 2]) -> (f64, f64) {
    let x1 = Vector3::new(a[0], a[1], 1.0);
    let x2 = Vector3::new(b[0], b[1], 1.0);
    let fx1 = f * x1;
    let ftx2 = f.transpose() * x2;
    let num = x2.dot(&fx1);
    let den = fx1.x * fx1.x + fx1.y * fx1.y + ftx2.x * ftx2.x + ftx2.y * ftx2.y;
    if den <= 0.0 {
        return (f64::INFINITY, den);
    }
    (num * num / den, den)
}

/// Inlier flags and the truncated quadratic cost of a model.
struct Score {
    inliers: Vec<bool>,
    count: usize,
    cost: f64,
}

/// Essential-matrix RANSAC over five-point minimal samples. Models are ranked
/// by the truncated squared Sampson distance in pixels (MSAC); inliers are
/// the correspondences under the threshold. The winner is polished by
/// Sampson-weighted least squares on its inliers while that lowers the cost,
/// then decomposed with the cheirality check.
pub fn estimate_relative_pose(
    points1: &[[f64; 2]],
    points2: &[[f64; 2]],
    k1: &Matrix3<f64>,
    k2: &Matrix3<f64>,
    cfg: &RansacConfig,
) -> std::result::Result<PoseEstimate, PoseFailure> {
    let n = points1.len().min(points2.len());
    if n < 5 {
        return Err(PoseFailure::TooFewMatches(n));
    }
    let (k1_inv, k2_inv) = match (k1.try_inverse(), k2.try_inverse()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(PoseFailure::NoModel),
    };
    let q1: Vec<[f64; 2]> = points1[..n].iter().map(|p| normalize(&k1_inv, p)).collect();
    let q2: Vec<[f64; 2]> = points2[..n].iter().map(|p| normalize(&k2_inv, p)).collect();
    let thr_sq = cfg.reproj_threshold * cfg.reproj_threshold;
    let to_f = |e: &Matrix3<f64>| k2_inv.transpose() * e * k1_inv;
    let score = |e: &Matrix3<f64>| -> Score {
        let f = to_f(e);
        let mut inliers = Vec::with_capacity(n);
        let (mut count, mut cost) = (0, 0.0);
        for i in 0..n {
            let d = sampson_parts(&f, &points1[i], &points2[i]).0;
            let inl = d < thr_sq;
            inliers.push(inl);
            count += inl as usize;
            cost += d.min(thr_sq);
        }
        Score { inliers, count, cost }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Matrix3<f64>, Score)> = None;
    let mut needed = cfg.max_iterations;
    let mut iter = 0;
    while iter < needed.min(cfg.max_iterations) {
        iter += 1;
        let idx = sample(&mut rng, n, 5);
        let s1: [[f64; 2]; 5] = std::array::from_fn(|j| q1[idx.index(j)]);
        let s2: [[f64; 2]; 5] = std::array::from_fn(|j| q2[idx.index(j)]);
        for e in five_point(&s1, &s2) {
            let sc = score(&e);
            if best.as_ref().map_or(true, |b| sc.cost < b.1.cost) {
                let w = sc.count as f64 / n as f64;
                best = Some((e, sc));
                let p_good = w.powi(5);
                needed = if p_good >= 1.0 {
                    1
                } else if p_good <= 0.0 {
                    cfg.max_iterations
                } else {
                    let k = (1.0 - cfg.confidence).ln() / (1.0 - p_good).ln();
                    if k.is_finite() {
                        k.ceil().max(1.0) as usize
                    } else {
                        cfg.max_iterations
                    }
                };
            }
        }
    }
    let (mut e, mut sc) = best.ok_or(PoseFailure::NoModel)?;
    if sc.count < 5 {
        return Err(PoseFailure::NoModel);
    }
    let sel = |inl: &[bool], q: &[[f64; 2]]| -> Vec<[f64; 2]> {
        q.iter().zip(inl).filter(|(_, &b)| b).map(|(p, _)| *p).collect()
    };
    for _ in 0..10 {
        let f = to_f(&e);
        // Weighting each algebraic residual by the Sampson denominator turns the
        // linear fit into a first-order geometric one.
        let weights: Vec<f64> = (0..n)
            .filter(|&i| sc.inliers[i])
            .map(|i| {
                let den = sampson_parts(&f, &points1[i], &points2[i]).1;
                if den > 0.0 {
                    1.0 / den
                } else {
                    0.0
                }
            })
            .collect();
        let Some(refit) = eight_point_weighted(&sel(&sc.inliers, &q1), &sel(&sc.inliers, &q2), &weights) else {
            break;
        };
        let refit_score = score(&refit);
        if refit_score.cost >= sc.cost {
            break;
        }
        (e, sc) = (refit, refit_score);
    }
    let (r, t, front) =
        decompose_essential(&e, &sel(&sc.inliers, &q1), &sel(&sc.inliers, &q2)).ok_or(PoseFailure::NoModel)?;
    if front == 0 {
        return Err(PoseFailure::NoModel);
    }
    Ok(PoseEstimate {
        pose: RelativePose {
            rotation: r,
            translation: t.normalize(),
        },
        essential: e,
        inliers: sc.inliers,
    })
}

/// Angle of `r` as a rotation, robust near 0 and 180 degrees.
fn rotation_angle_deg(r: &Matrix3<f64>) -> f64 {
    let cos = (r.trace() - 1.0) / 2.0;
    let axis = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = 0.5 * axis.norm();
    sin.atan2(cos).to_degrees()
}

fn vector_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

/// Rotation error, translation-direction error and their maximum, in degrees.
pub fn final_pose_error(est: &RelativePose, gt: &RelativePose) -> Result<PoseError> {
    let rotation_error = rotation_angle_deg(&(est.rotation * gt.rotation.transpose()));
    let (ne, ng) = (est.translation.norm(), gt.translation.norm());
    let translation_error = match (ne > 0.0, ng > 0.0) {
        (true, true) => vector_angle_deg(&est.translation, &gt.translation),
        (false, false) => 0.0,
        _ => {
            return Err(Error::InvalidArgument(
                "translation error is undefined when exactly one translation is zero".into(),
            ))
        }
    };
    Ok(PoseError {
        rotation_error,
        translation_error,
        fpe: rotation_error.max(translation_error),
    })
}

/// [`final_pose_error`] of an estimate, or [`FAILURE_ERROR_DEG`] on failure.
pub fn fpe_or_failure(est: &std::result::Result<PoseEstimate, PoseFailure>, gt: &RelativePose) -> Result<f64> {
    match est {
        Ok(e) => Ok(final_pose_error(&e.pose, gt)?.fpe),
        Err(_) => Ok(FAILURE_ERROR_DEG),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};

    fn pose(r: Matrix3<f64>, t: [f64; 3]) -> RelativePose {
        RelativePose {
            rotation: r,
            translation: Vector3::from(t),
        }
    }

    #[test]
    fn identical_poses_have_zero_error() {
        let r = Rotation3::from_euler_angles(0.1, -0.4, 0.3).into_inner();
        let p = pose(r, [0.3, 0.1, -0.9]);
        let e = final_pose_error(&p, &p).unwrap();
        assert_eq!(e.fpe, 0.0);
    }

    #[test]
    fn five_degree_rotation() {
        let axis = Unit::new_normalize(Vector3::new(1.0, 2.0, -0.5));
        let base = Rotation3::from_euler_angles(0.2, 0.1, 0.0);
        let turned = Rotation3::from_axis_angle(&axis, 5f64.to_radians()) * base;
        let e = final_pose_error(&pose(turned.into_inner(), [1.0, 0.0, 0.0]), &pose(base.into_inner(), [1.0, 0.0, 0.0]))
            .unwrap();
        assert!((e.fpe - 5.0).abs() < 1e-9);
        assert!(e.translation_error.abs() < 1e-12);
    }

    #[test]
    fn antipodal_translation() {
        let i = Matrix3::identity();
        let e = final_pose_error(&pose(i, [0.0, 0.0, 1.0]), &pose(i, [0.0, 0.0, -1.0])).unwrap();
        assert_eq!(e.translation_error, 180.0);
        assert_eq!(e.fpe, 180.0);
        assert!(final_pose_error(&pose(i, [0.0; 3]), &pose(i, [1.0, 0.0, 0.0])).is_err());
        assert_eq!(final_pose_error(&pose(i, [0.0; 3]), &pose(i, [0.0; 3])).unwrap().fpe, 0.0);
    }

    #[test]
    fn too_few_matches_fail() {
        let k = Matrix3::identity();
        let p = [[0.0, 0.0]; 4];
        let est = estimate_relative_pose(&p, &p, &k, &k, &RansacConfig::default());
        assert_eq!(est.as_ref().unwrap_err(), &PoseFailure::TooFewMatches(4));
        assert_eq!(fpe_or_failure(&est, &pose(k, [1.0, 0.0, 0.0])).unwrap(), 180.0);
    }
}
