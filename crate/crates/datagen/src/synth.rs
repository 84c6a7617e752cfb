//! Synthetic scale pairs: one content image pasted into two backgrounds at
//! different magnifications.

use scalenet_core::error::{Error, Result};
use scalenet_core::image::{scaled_dim, Image, Rounding};
use scalenet_core::ratio::ScaleRatio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Accepted range of the zoom exponent `m`.
pub const MAX_ZOOM_EXPONENT: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SyntheticDown,
    SyntheticUp,
    Annotated,
}

/// Where a content window lands in one image of a pair.
///
/// Content coordinate `u` (continuous, in pixels of the original content)
/// maps to image coordinate `col + (u - origin) * zoom`, and only the pasted
/// rectangle `[col, col + width) x [row, row + height)` shows content.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentView {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    /// Content coordinates `[x, y]` of the rectangle's top-left corner.
    pub origin: [f64; 2],
    /// Image pixels per content pixel, `[x, y]`.
    pub zoom: [f64; 2],
}

impl ContentView {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.col as f64
            && x < (self.col + self.width) as f64
            && y >= self.row as f64
            && y < (self.row + self.height) as f64
    }

    pub fn to_content(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        self.contains(x, y).then(|| {
            [
                self.origin[0] + (x - self.col as f64) / self.zoom[0],
                self.origin[1] + (y - self.row as f64) / self.zoom[1],
            ]
        })
    }

    pub fn from_content(&self, u: f64, v: f64) -> Option<[f64; 2]> {
        let x = self.col as f64 + (u - self.origin[0]) * self.zoom[0];
        let y = self.row as f64 + (v - self.origin[1]) * self.zoom[1];
        self.contains(x, y).then_some([x, y])
    }

    /// Content-space rectangle `[x0, y0, x1, y1]` shown by this view.
    pub fn content_window(&self) -> [f64; 4] {
        [
            self.origin[0],
            self.origin[1],
            self.origin[0] + self.width as f64 / self.zoom[0],
            self.origin[1] + self.height as f64 / self.zoom[1],
        ]
    }
}

/// Logged geometry of a synthetic pair, in stored pair order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub zoom_exponent: f64,
    pub content_height: usize,
    pub content_width: usize,
    pub view1: ContentView,
    pub view2: ContentView,
}

impl Placement {
    /// Ground-truth correspondence from image 1 to image 2; `None` outside
    /// the shared content.
    pub fn warp_1_to_2(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        let [u, v] = self.view1.to_content(x, y)?;
        self.view2.from_content(u, v)
    }

    pub fn warp_2_to_1(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        let [u, v] = self.view2.to_content(x, y)?;
        self.view1.from_content(u, v)
    }

    /// Content window visible in both images.
    pub fn shared_window(&self) -> [f64; 4] {
        let a = self.view1.content_window();
        let b = self.view2.content_window();
        [a[0].max(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].min(b[3])]
    }

    /// Pixel area covered by the shared content in image 1 and image 2.
    pub fn covisible_areas(&self) -> (f64, f64) {
        let [x0, y0, x1, y1] = self.shared_window();
        let a = (x1 - x0).max(0.0) * (y1 - y0).max(0.0);
        (
            a * self.view1.zoom[0] * self.view1.zoom[1],
            a * self.view2.zoom[0] * self.view2.zoom[1],
        )
    }

    /// Transfer error of a putative match, measured in whichever image shows
    /// the content at the lower magnification so that both sides are judged
    /// at the coarser localization. `None` if `p1` is not on shared content.
    pub fn match_error(&self, p1: [f64; 2], p2: [f64; 2]) -> Option<f64> {
        if self.view1.zoom[0] <= self.view2.zoom[0] {
            let q = self.warp_2_to_1(p2[0], p2[1])?;
            self.view1.to_content(p1[0], p1[1])?;
            Some(((q[0] - p1[0]).powi(2) + (q[1] - p1[1]).powi(2)).sqrt())
        } else {
            let q = self.warp_1_to_2(p1[0], p1[1])?;
            self.view2.to_content(p2[0], p2[1])?;
            Some(((q[0] - p2[0]).powi(2) + (q[1] - p2[1]).powi(2)).sqrt())
        }
    }
}

/// A generated pair with `phi(image1, image2) = gt_ratio`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub image1: Image,
    pub image2: Image,
    pub gt_ratio: ScaleRatio,
    pub provenance: Provenance,
    pub placement: Placement,
}

fn check_inputs(content: &Image, bg1: &Image, bg2: &Image, m: f64) -> Result<()> {
    if !(0.0..=MAX_ZOOM_EXPONENT).contains(&m) {
        return Err(Error::InvalidArgument(format!("zoom exponent {m} outside [0, {MAX_ZOOM_EXPONENT}]")));
    }
    for bg in [bg1, bg2] {
        if content.height() > bg.height() || content.width() > bg.width() {
            return Err(Error::InvalidArgument(format!(
                "content {}x{} larger than background {}x{}",
                content.height(),
                content.width(),
                bg.height(),
                bg.width()
            )));
        }
    }
    Ok(())
}

fn paste_random(bg: &Image, patch: &Image, rng: &mut ChaCha8Rng) -> Result<(Image, usize, usize)> {
    let row = rng.gen_range(0..=bg.height() - patch.height());
    let col = rng.gen_range(0..=bg.width() - patch.width());
    let mut out = bg.clone();
    out.paste(patch, row, col)?;
    Ok((out, row, col))
}

/// Pastes `content` into `bg1` and a `2^-m` shrunk copy into `bg2`. The pair
/// is stored as `(bg2 + shrunk, bg1 + content)` with ratio `2^m`.
pub fn make_pair_downsample(content: &Image, bg1: &Image, bg2: &Image, m: f64, seed: u64) -> Result<SyntheticPair> {
    check_inputs(content, bg1, bg2, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factor = (-m).exp2();
    let sh = scaled_dim(content.height(), factor, Rounding::HalfUp).max(1);
    let sw = scaled_dim(content.width(), factor, Rounding::HalfUp).max(1);
    let small = if m == 0.0 { content.clone() } else { content.resize(sh, sw)? };
    let (with_content, r1, c1) = paste_random(bg1, content, &mut rng)?;
    let (with_small, r2, c2) = paste_random(bg2, &small, &mut rng)?;
    let (ch, cw) = (content.height(), content.width());
    let placement = Placement {
        zoom_exponent: m,
        content_height: ch,
        content_width: cw,
        view1: ContentView {
            row: r2,
            col: c2,
            height: sh,
            width: sw,
            origin: [0.0, 0.0],
            zoom: [sw as f64 / cw as f64, sh as f64 / ch as f64],
        },
        view2: ContentView {
            row: r1,
            col: c1,
            height: ch,
            width: cw,
            origin: [0.0, 0.0],
            zoom: [1.0, 1.0],
        },
    };
    Ok(SyntheticPair {
        image1: with_small,
        image2: with_content,
        gt_ratio: ScaleRatio::from_value(m.exp2())?,
        provenance: Provenance::SyntheticDown,
        placement,
    })
}

/// Pastes `content` into `bg1` and, into `bg2`, the central `1 / 2^m` window
/// of `content` magnified by `2^m` back to the content size. The pair is
/// stored as `(bg1 + content, bg2 + magnified)` with ratio `2^m`.
pub fn make_pair_upsample(content: &Image, bg1: &Image, bg2: &Image, m: f64, seed: u64) -> Result<SyntheticPair> {
    check_inputs(content, bg1, bg2, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zoom = m.exp2();
    let (ch, cw) = (content.height(), content.width());
    let x0 = (cw as f64 - cw as f64 / zoom) / 2.0;
    let y0 = (ch as f64 - ch as f64 / zoom) / 2.0;
    let crop = if m == 0.0 { content.clone() } else { content.zoom_window(x0, y0, zoom, ch, cw) };
    let (with_content, r1, c1) = paste_random(bg1, content, &mut rng)?;
    let (with_crop, r2, c2) = paste_random(bg2, &crop, &mut rng)?;
    let placement = Placement {
        zoom_exponent: m,
        content_height: ch,
        content_width: cw,
        view1: ContentView {
            row: r1,
            col: c1,
            height: ch,
            width: cw,
            origin: [0.0, 0.0],
            zoom: [1.0, 1.0],
        },
        view2: ContentView {
            row: r2,
            col: c2,
            height: ch,
            width: cw,
            origin: [x0, y0],
            zoom: [zoom, zoom],
        },
    };
    Ok(SyntheticPair {
        image1: with_content,
        image2: with_crop,
        gt_ratio: ScaleRatio::from_value(zoom)?,
        provenance: Provenance::SyntheticUp,
        placement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::render_blobs;

    fn content(side: usize) -> Image {
        render_blobs(side, side, &mut ChaCha8Rng::seed_from_u64(1))
    }

    fn bg(side: usize, v: f32) -> Image {
        Image::constant(side, side, [v; 3])
    }

    #[test]
    fn unit_zoom_keeps_content() {
        let c = content(64);
        let p = make_pair_downsample(&c, &bg(96, 0.1), &bg(96, 0.9), 0.0, 3).unwrap();
        assert_eq!(p.gt_ratio, ScaleRatio::ONE);
        assert_eq!((p.placement.view1.height, p.placement.view1.width), (64, 64));
        let q = make_pair_upsample(&c, &bg(96, 0.1), &bg(96, 0.9), 0.0, 3).unwrap();
        assert_eq!(q.gt_ratio.value(), 1.0);
        let v = q.placement.view2;
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(q.image2.get(1, v.row + y, v.col + x), c.get(1, y, x));
            }
        }
    }

    #[test]
    fn downsample_by_eight() {
        let c = content(256);
        let p = make_pair_downsample(&c, &bg(300, 0.1), &bg(300, 0.9), 3.0, 5).unwrap();
        assert_eq!(p.gt_ratio.value(), 8.0);
        assert_eq!((p.placement.view1.height, p.placement.view1.width), (32, 32));
        assert_eq!(p.provenance, Provenance::SyntheticDown);
        // image2 holds the full-size content
        let v = p.placement.view2;
        assert_eq!(p.image2.get(0, v.row + 10, v.col + 20), c.get(0, 10, 20));
    }

    #[test]
    fn upsample_by_four_covers_central_quarter() {
        let c = content(128);
        let p = make_pair_upsample(&c, &bg(160, 0.1), &bg(160, 0.9), 2.0, 5).unwrap();
        assert_eq!(p.gt_ratio.value(), 4.0);
        let w = p.placement.view2.content_window();
        assert_eq!(w, [48.0, 48.0, 80.0, 80.0]);
        assert_eq!((p.placement.view2.height, p.placement.view2.width), (128, 128));
    }

    #[test]
    fn same_seed_same_placement() {
        let c = content(40);
        let a = make_pair_downsample(&c, &bg(100, 0.1), &bg(100, 0.9), 1.5, 11).unwrap();
        let b = make_pair_downsample(&c, &bg(100, 0.1), &bg(100, 0.9), 1.5, 11).unwrap();
        assert_eq!(a, b);
        let a = make_pair_upsample(&c, &bg(100, 0.1), &bg(100, 0.9), 1.5, 11).unwrap();
        let b = make_pair_upsample(&c, &bg(100, 0.1), &bg(100, 0.9), 1.5, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = content(64);
        assert!(make_pair_downsample(&c, &bg(32, 0.1), &bg(96, 0.9), 1.0, 0).is_err());
        assert!(make_pair_upsample(&c, &bg(96, 0.1), &bg(96, 0.9), 7.5, 0).is_err());
        assert!(make_pair_downsample(&c, &bg(96, 0.1), &bg(96, 0.9), -0.5, 0).is_err());
    }

    #[test]
    fn covisible_areas_agree_after_resizing_by_ratio() {
        let c = content(120);
        for m in [0.0, 0.7, 2.0, 3.3, 5.0] {
            for seed in 0..3 {
                for p in [
                    make_pair_downsample(&c, &bg(160, 0.1), &bg(160, 0.9), m, seed).unwrap(),
                    make_pair_upsample(&c, &bg(160, 0.1), &bg(160, 0.9), m, seed).unwrap(),
                ] {
                    let (a1, a2) = p.placement.covisible_areas();
                    let s = p.gt_ratio.value();
                    // Split resizing by s^0.5 and s^-0.5 equalizes the areas;
                    // the only slack is the rounding of the shrunk paste.
                    let (r1, r2) = (s.sqrt(), 1.0 / s.sqrt());
                    let side1 = (a1 * r1 * r1).sqrt();
                    let side2 = (a2 * r2 * r2).sqrt();
                    assert!((side1 - side2).abs() <= 0.5 * s.sqrt() + 1e-9, "m={m}: {side1} vs {side2}");
                }
            }
        }
    }

    #[test]
    fn warps_are_mutually_inverse() {
        let c = content(100);
        let p = make_pair_upsample(&c, &bg(150, 0.1), &bg(150, 0.9), 1.0, 2).unwrap();
        let v2 = p.placement.view2;
        let q = [v2.col as f64 + 30.25, v2.row as f64 + 70.5];
        let back = p.placement.warp_2_to_1(q[0], q[1]).unwrap();
        let fwd = p.placement.warp_1_to_2(back[0], back[1]).unwrap();
        assert!((fwd[0] - q[0]).abs() < 1e-9 && (fwd[1] - q[1]).abs() < 1e-9);
        assert_eq!(p.placement.match_error(back, q), Some(0.0));
        // A background pixel of image 1 has no partner.
        let v1 = p.placement.view1;
        if v1.col > 0 {
            assert!(p.placement.warp_1_to_2(0.5, v1.row as f64 + 1.0).is_none());
        }
    }
}
