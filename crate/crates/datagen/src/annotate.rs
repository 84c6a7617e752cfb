//! Ground-truth scale ratios from posed views with depth.
//!
//! Each view is back-projected to a world-frame point cloud. `V1` counts the
//! points of view 1 that have a neighbor in view 2's cloud closer than a
//! tolerance, `V2` the converse, and the pair's ratio is `V1 / V2`.

use super::kdtree::KdTree;
use scalenet_core::error::{Error, Result};
use scalenet_core::image::Image;
use scalenet_core::ratio::ScaleRatio;
use nalgebra::{Matrix3, Vector3};
use std::path::Path;

/// Default multiple of the median nearest-neighbor spacing used as the
/// visibility tolerance.
pub const TAU_SPACING_MULTIPLE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DepthSample {
    /// Continuous pixel coordinates.
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// An image with intrinsics, world-to-camera pose `x_cam = R x_world + t` and
/// sparse depth.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub image: Option<Image>,
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub depth: Vec<DepthSample>,
}

impl CameraView {
    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) || k.try_inverse().is_none() {
            return Err(Error::InvalidArgument("intrinsics must be invertible with positive focal lengths".into()));
        }
        let r = &self.rotation;
        if ((r * r.transpose()) - Matrix3::identity()).abs().max() > 1e-6 || r.determinant() < 0.0 {
            return Err(Error::InvalidArgument("rotation is not orthonormal".into()));
        }
        if let Some(d) = self.depth.iter().find(|d| !(d.depth.is_finite() && d.depth > 0.0)) {
            return Err(Error::InvalidArgument(format!("depth {} at ({}, {}) is not positive", d.depth, d.u, d.v)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Visibility tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Tau {
    /// [`TAU_SPACING_MULTIPLE`] times the median nearest-neighbor spacing of
    /// the reference cloud.
    #[default]
    Auto,
    Absolute(f64),
}

/// Back-projects every depth sample and moves it to the world frame.
pub fn visible_point_cloud(view: &CameraView) -> Result<PointCloud> {
    view.validate()?;
    if view.depth.is_empty() {
        return Err(Error::InvalidArgument("empty depth map".into()));
    }
    let k_inv = view.intrinsics.try_inverse().expect("validated");
    let r_t = view.rotation.transpose();
    let points = view
        .depth
        .iter()
        .map(|d| {
            let cam = k_inv * Vector3::new(d.u, d.v, 1.0) * d.depth;
            let w = r_t * (cam - view.translation);
            [w.x, w.y, w.z]
        })
        .collect();
    Ok(PointCloud { points })
}

/// Median distance from each point to its closest other point.
pub fn median_spacing(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::InvalidArgument("spacing needs at least two points".into()));
    }
    let tree = KdTree::new(&cloud.points);
    let mut d: Vec<f64> = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| tree.nearest_excluding(p, Some(i)).expect("two points").1.sqrt())
        .collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    Ok(if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) })
}

fn resolve_tau(tau: Tau, reference: &PointCloud) -> Result<f64> {
    let t = match tau {
        Tau::Absolute(t) => t,
        Tau::Auto => TAU_SPACING_MULTIPLE * median_spacing(reference)?,
    };
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidArgument(format!("visibility tolerance {t} must be positive")));
    }
    Ok(t)
}

/// Number of points of `src` whose nearest neighbor in `reference` is closer
/// than `tau`.
pub fn cross_visibility_count(src: &PointCloud, reference: &PointCloud, tau: f64) -> usize {
    if reference.is_empty() {
        return 0;
    }
    let tree = KdTree::new(&reference.points);
    src.points
        .iter()
        .filter(|p| tree.nearest(p).expect("nonempty").1.sqrt() < tau)
        .count()
}

/// `(V1, V2)` for a pair of views; each count uses the tolerance derived
/// from the cloud it is measured against.
pub fn covisibility_counts(v1: &CameraView, v2: &CameraView, tau: Tau) -> Result<(usize, usize)> {
    let p1 = visible_point_cloud(v1)?;
    let p2 = visible_point_cloud(v2)?;
    let n1 = cross_visibility_count(&p1, &p2, resolve_tau(tau, &p2)?);
    let n2 = cross_visibility_count(&p2, &p1, resolve_tau(tau, &p1)?);
    Ok((n1, n2))
}

/// `phi(I1, I2) = V1 / V2`. The logarithm is taken of the quotient that is at
/// least one and negated otherwise, so swapping the views negates it exactly.
pub fn annotate_scale_ratio(v1: &CameraView, v2: &CameraView, tau: Tau) -> Result<ScaleRatio> {
    let (n1, n2) = covisibility_counts(v1, v2, tau)?;
    if n1 == 0 || n2 == 0 {
        return Err(Error::NoOverlap { v1: n1, v2: n2 });
    }
    let (a, b) = (n1 as f64, n2 as f64);
    ScaleRatio::from_log2(if n1 >= n2 { (a / b).log2() } else { -(b / a).log2() })
}

/// Reads a `u,v,depth` table with a header row.
pub fn read_depth_table(path: &Path) -> Result<Vec<DepthSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(bad(format!("expected 3 columns, got {}", cols.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        out.push(DepthSample {
            u: parse(cols[0])?,
            v: parse(cols[1])?,
            depth: parse(cols[2])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> Matrix3<f64> {
        Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 240.0, 0.0, 0.0, 1.0)
    }

    fn view(rotation: Matrix3<f64>, translation: Vector3<f64>, depth: Vec<DepthSample>) -> CameraView {
        CameraView {
            image: None,
            intrinsics: k(),
            rotation,
            translation,
            depth,
        }
    }

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud {
            points: points.to_vec(),
        }
    }

    #[test]
    fn principal_point_maps_to_optical_axis() {
        let d = vec![DepthSample {
            u: 320.0,
            v: 240.0,
            depth: 7.0,
        }];
        let p = visible_point_cloud(&view(Matrix3::identity(), Vector3::zeros(), d.clone())).unwrap();
        assert_eq!(p.points, vec![[0.0, 0.0, 7.0]]);
        let t = Vector3::new(1.0, -2.0, 0.5);
        let p = visible_point_cloud(&view(Matrix3::identity(), t, d)).unwrap();
        assert_eq!(p.points, vec![[-1.0, 2.0, 6.5]]);
    }

    #[test]
    fn empty_depth_and_bad_intrinsics_are_rejected() {
        assert!(visible_point_cloud(&view(Matrix3::identity(), Vector3::zeros(), vec![])).is_err());
        let mut v = view(
            Matrix3::identity(),
            Vector3::zeros(),
            vec![DepthSample {
                u: 1.0,
                v: 1.0,
                depth: 1.0,
            }],
        );
        v.intrinsics = Matrix3::zeros();
        assert!(visible_point_cloud(&v).is_err());
    }

    #[test]
    fn single_pair_counts() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 0.0, 1.0]]);
        assert_eq!(cross_visibility_count(&a, &b, 0.5), 0);
        assert_eq!(cross_visibility_count(&a, &b, 2.0), 1);
        assert_eq!(cross_visibility_count(&a, &a, 1e-9), 1);
    }

    /// Fronto-parallel plane at depth 10 sampled on an `n x n` pixel grid
    /// spanning the same 200-pixel square.
    fn plane_view(n: usize) -> CameraView {
        let step = 200.0 / n as f64;
        let mut depth = Vec::new();
        for i in 0..n {
            for j in 0..n {
                depth.push(DepthSample {
                    u: 220.0 + (j as f64 + 0.5) * step,
                    v: 140.0 + (i as f64 + 0.5) * step,
                    depth: 10.0,
                });
            }
        }
        view(Matrix3::identity(), Vector3::zeros(), depth)
    }

    #[test]
    fn plane_at_two_resolutions_gives_ratio_four() {
        let fine = plane_view(20);
        let coarse = plane_view(10);
        assert_eq!(covisibility_counts(&fine, &coarse, Tau::Auto).unwrap(), (400, 100));
        let s = annotate_scale_ratio(&fine, &coarse, Tau::Auto).unwrap();
        assert_eq!(s.value(), 4.0);
        let r = annotate_scale_ratio(&coarse, &fine, Tau::Auto).unwrap();
        assert_eq!(s.log2() + r.log2(), 0.0);
    }

    #[test]
    fn identical_views_and_disjoint_views() {
        let v = plane_view(6);
        assert_eq!(annotate_scale_ratio(&v, &v, Tau::Auto).unwrap(), ScaleRatio::ONE);
        let mut far = plane_view(6);
        far.translation = Vector3::new(1e3, 0.0, 0.0);
        assert!(matches!(
            annotate_scale_ratio(&v, &far, Tau::Auto),
            Err(Error::NoOverlap { .. })
        ));
    }

    #[test]
    fn depth_table_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "u,v,depth\n1,2,3.5\n4.5, 5, 6\n").unwrap();
        let d = read_depth_table(&p).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[1].u, 4.5);
        std::fs::write(&p, "u,v,depth\n1,2\n").unwrap();
        assert!(read_depth_table(&p).is_err());
    }
}
