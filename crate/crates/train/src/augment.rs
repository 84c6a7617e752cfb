//! Small random perspective warps used as training augmentation.

use scalenet_core::error::{Error, Result};
use scalenet_core::image::Image;
use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest accepted corner displacement, as a fraction of the image size.
pub const MAX_MAGNITUDE: f64 = 0.1;
pub const DEFAULT_MAGNITUDE: f64 = 0.05;

/// A homography fixed by four corner correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct Perspective {
    /// Source corners in order top-left, top-right, bottom-right, bottom-left.
    pub src: [[f64; 2]; 4],
    pub dst: [[f64; 2]; 4],
    /// Maps homogeneous source points to destination points.
    pub homography: Matrix3<f64>,
}

impl Perspective {
    pub fn map(&self, x: f64, y: f64) -> [f64; 2] {
        let p = self.homography * Vector3::new(x, y, 1.0);
        [p.x / p.z, p.y / p.z]
    }
}

/// Solves the homography taking each `src[i]` to `dst[i]` (`h33 = 1`).
pub fn homography_from_corners(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Result<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let [x, y] = src[i];
        let [u, v] = dst[i];
        let r = 2 * i;
        a.set_row(r, &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]));
        a.set_row(r + 1, &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]));
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidArgument("degenerate corner configuration".into()))?;
    Ok(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

fn is_convex(q: &[[f64; 2]; 4]) -> bool {
    let mut sign = 0.0;
    for i in 0..4 {
        let a = q[i];
        let b = q[(i + 1) % 4];
        let c = q[(i + 2) % 4];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross == 0.0 || (sign != 0.0 && cross.signum() != sign) {
            return false;
        }
        sign = cross.signum();
    }
    true
}

/// Draws corner offsets uniformly within `magnitude * (width, height)` for the
/// rectangle `[0, width] x [0, height]`, redrawing non-convex quadrilaterals.
pub fn random_perspective(width: f64, height: f64, magnitude: f64, rng: &mut impl Rng) -> Result<Perspective> {
    if !(0.0..=MAX_MAGNITUDE).contains(&magnitude) {
        return Err(Error::InvalidArgument(format!(
            "perspective magnitude {magnitude} outside [0, {MAX_MAGNITUDE}]"
        )));
    }
    let src = [[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]];
    if magnitude == 0.0 {
        return Ok(Perspective {
            src,
            dst: src,
            homography: Matrix3::identity(),
        });
    }
    loop {
        let mut dst = src;
        for c in dst.iter_mut() {
            c[0] += rng.gen_range(-magnitude..=magnitude) * width;
            c[1] += rng.gen_range(-magnitude..=magnitude) * height;
        }
        if !is_convex(&dst) {
            continue;
        }
        let homography = homography_from_corners(&src, &dst)?;
        return Ok(Perspective { src, dst, homography });
    }
}

/// Warps `img` by a random perspective with the given seed. Output pixels are
/// bilinear samples of the inverse-mapped source point, clamped to the border.
pub fn random_perspective_augment(img: &Image, magnitude: f64, seed: u64) -> Result<(Image, Perspective)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (img.width() as f64, img.height() as f64);
    let p = random_perspective(w, h, magnitude, &mut rng)?;
    if magnitude == 0.0 {
        return Ok((img.clone(), p));
    }
    let inv = p
        .homography
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular homography".into()))?;
    let out = Image::from_fn(img.height(), img.width(), |y, x| {
        let q = inv * Vector3::new(x as f64 + 0.5, y as f64 + 0.5, 1.0);
        let sx = (q.x / q.z).clamp(0.0, w);
        let sy = (q.y / q.z).clamp(0.0, h);
        let mut px = [0.0; 3];
        for (c, v) in px.iter_mut().enumerate() {
            *v = img.sample(c, sx, sy).unwrap_or(0.0);
        }
        px
    });
    Ok((out, p))
}
