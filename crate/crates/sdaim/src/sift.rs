//! Difference-of-Gaussians keypoints with gradient-orientation histogram
//! descriptors.

use scalenet_core::image::Image;
use serde::{Deserialize, Serialize};
use std::f32::consts::PI;

pub const DESCRIPTOR_LEN: usize = 128;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const ORI_BINS: usize = 36;
const INPUT_BLUR: f64 = 0.5;
const BORDER: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiftConfig {
    pub max_keypoints: usize,
    pub intervals: usize,
    pub sigma: f64,
    /// Minimum absolute DoG response after interpolation, for intensities in
    /// `[0, 1]`.
    pub contrast_threshold: f64,
    /// Largest accepted ratio of principal curvatures.
    pub edge_threshold: f64,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            max_keypoints: 2000,
            intervals: 3,
            sigma: 1.6,
            contrast_threshold: 0.04,
            edge_threshold: 10.0,
        }
    }
}

/// A detected feature in the coordinates of the image it was found in.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Blob scale in pixels.
    pub size: f64,
    /// Dominant gradient orientation in radians.
    pub angle: f64,
    pub score: f64,
    pub descriptor: Vec<f32>,
}

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f32>,
}

impl Plane {
    #[inline]
    fn at(&self, y: usize, x: usize) -> f32 {
        self.v[y * self.w + x]
    }

    fn half(&self) -> Plane {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut v = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                v.push(self.at(2 * y, 2 * x));
            }
        }
        Plane { h, w, v }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge replication.
fn blur(p: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return p.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = (p.h, p.w);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; h * w];
    for y in 0..h {
        let row = &p.v[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                acc += kv * row[clamp(x as isize + j as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for (j, &kv) in k.iter().enumerate() {
        for y in 0..h {
            let src = clamp(y as isize + j as isize - r, h);
            let s = &tmp[src * w..(src + 1) * w];
            let d = &mut out[y * w..(y + 1) * w];
            for (o, &v) in d.iter_mut().zip(s) {
                *o += kv * v;
            }
        }
    }
    Plane { h, w, v: out }
}

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
}

fn build_octaves(gray: Plane, cfg: &SiftConfig) -> Vec<Octave> {
    let s = cfg.intervals;
    let n_oct = {
        let mut n = 0;
        let mut side = gray.h.min(gray.w);
        while side >= 2 * BORDER + 8 {
            n += 1;
            side = side.div_ceil(2);
        }
        n
    };
    let k = 2f64.powf(1.0 / s as f64);
    let mut sig = vec![cfg.sigma];
    for i in 1..s + 3 {
        let prev = cfg.sigma * k.powi(i as i32 - 1);
        let total = prev * k;
        sig.push((total * total - prev * prev).sqrt());
    }
    let first = (cfg.sigma * cfg.sigma - INPUT_BLUR * INPUT_BLUR).max(0.01).sqrt();
    let mut base = blur(&gray, first);
    let mut octaves = Vec::with_capacity(n_oct);
    for o in 0..n_oct {
        if o > 0 {
            base = octaves.last().map(|oc: &Octave| oc.gauss[s].half()).expect("previous octave");
        }
        let mut gauss = vec![base.clone()];
        for si in sig.iter().skip(1) {
            let next = blur(gauss.last().expect("nonempty"), *si);
            gauss.push(next);
        }
        let dog = gauss
            .windows(2)
            .map(|g| Plane {
                h: g[0].h,
                w: g[0].w,
                v: g[1].v.iter().zip(&g[0].v).map(|(a, b)| a - b).collect(),
            })
            .collect();
        octaves.push(Octave { gauss, dog });
    }
    octaves
}

struct Extremum {
    octave: usize,
    layer: usize,
    x: f64,
    y: f64,
    /// Scale within the octave, in octave pixels.
    sigma_oct: f64,
    response: f64,
}

fn is_extremum(dog: &[Plane], l: usize, y: usize, x: usize, v: f32) -> bool {
    let greater = v > 0.0;
    for plane in &dog[l - 1..=l + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let u = plane.at(yy, xx);
                if greater && u > v || !greater && u < v {
                    return false;
                }
            }
        }
    }
    true
}

/// Quadratic refinement in `(x, y, layer)`; `None` when the fit wanders off,
/// has low contrast or sits on an edge.
fn refine(oct: &Octave, mut l: usize, mut y: usize, mut x: usize, o: usize, cfg: &SiftConfig) -> Option<Extremum> {
    let s = cfg.intervals;
    let dog = &oct.dog;
    let (h, w) = (dog[0].h, dog[0].w);
    for _ in 0..5 {
        let d = |dl: isize, dy: isize, dx: isize| {
            dog[(l as isize + dl) as usize].at((y as isize + dy) as usize, (x as isize + dx) as usize) as f64
        };
        let g = [
            0.5 * (d(0, 0, 1) - d(0, 0, -1)),
            0.5 * (d(0, 1, 0) - d(0, -1, 0)),
            0.5 * (d(1, 0, 0) - d(-1, 0, 0)),
        ];
        let c = d(0, 0, 0);
        let dxx = d(0, 0, 1) + d(0, 0, -1) - 2.0 * c;
        let dyy = d(0, 1, 0) + d(0, -1, 0) - 2.0 * c;
        let dss = d(1, 0, 0) + d(-1, 0, 0) - 2.0 * c;
        let dxy = 0.25 * (d(0, 1, 1) - d(0, 1, -1) - d(0, -1, 1) + d(0, -1, -1));
        let dxs = 0.25 * (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1));
        let dys = 0.25 * (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0));
        let hm = nalgebra::Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
        let off = -(hm.try_inverse()? * nalgebra::Vector3::from(g));
        if off.iter().all(|v| v.abs() < 0.5) {
            let response = c + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2]);
            if response.abs() * (s as f64) < cfg.contrast_threshold {
                return None;
            }
            let tr = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            let r = cfg.edge_threshold;
            if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
                return None;
            }
            return Some(Extremum {
                octave: o,
                layer: l,
                x: x as f64 + off[0],
                y: y as f64 + off[1],
                sigma_oct: cfg.sigma * 2f64.powf((l as f64 + off[2]) / s as f64),
                response: response.abs(),
            });
        }
        if off.iter().any(|v| v.abs() > (w.max(h)) as f64) {
            return None;
        }
        x = (x as f64 + off[0].round()) as usize;
        y = (y as f64 + off[1].round()) as usize;
        l = (l as f64 + off[2].round()) as usize;
        if l < 1 || l > s || x < BORDER || y < BORDER || x >= w - BORDER || y >= h - BORDER {
            return None;
        }
    }
    None
}

fn gradient(p: &Plane, y: usize, x: usize) -> (f32, f32) {
    let dx = p.at(y, x + 1) - p.at(y, x - 1);
    let dy = p.at(y + 1, x) - p.at(y - 1, x);
    ((dx * dx + dy * dy).sqrt(), dy.atan2(dx))
}

fn orientations(img: &Plane, e: &Extremum) -> Vec<f32> {
    let sigma = 1.5 * e.sigma_oct;
    let radius = (3.0 * sigma).round() as isize;
    let (cx, cy) = (e.x.round() as isize, e.y.round() as isize);
    let mut hist = [0.0f32; ORI_BINS];
    let denom = -1.0 / (2.0 * sigma * sigma) as f32;
    for dy in -radius..=radius {
        let y = cy + dy;
        if y <= 0 || y >= img.h as isize - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let x = cx + dx;
            if x <= 0 || x >= img.w as isize - 1 {
                continue;
            }
            let (mag, ang) = gradient(img, y as usize, x as usize);
            let wgt = ((dx * dx + dy * dy) as f32 * denom).exp();
            let bin = ((ang + PI) / (2.0 * PI) * ORI_BINS as f32).floor() as isize;
            hist[bin.rem_euclid(ORI_BINS as isize) as usize] += wgt * mag;
        }
    }
    let mut smooth = [0.0f32; ORI_BINS];
    for i in 0..ORI_BINS {
        let at = |k: isize| hist[(i as isize + k).rem_euclid(ORI_BINS as isize) as usize];
        smooth[i] = (at(-2) + at(2)) / 16.0 + (at(-1) + at(1)) * 4.0 / 16.0 + at(0) * 6.0 / 16.0;
    }
    let max = smooth.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..ORI_BINS {
        let l = smooth[(i + ORI_BINS - 1) % ORI_BINS];
        let r = smooth[(i + 1) % ORI_BINS];
        let c = smooth[i];
        if c > l && c > r && c >= 0.8 * max {
            let off = 0.5 * (l - r) / (l - 2.0 * c + r);
            let bin = i as f32 + 0.5 + off;
            out.push(bin / ORI_BINS as f32 * 2.0 * PI - PI);
        }
    }
    out
}

fn descriptor(img: &Plane, e: &Extremum, angle: f32) -> Vec<f32> {
    let d = DESC_WIDTH as f32;
    let hist_width = 3.0 * e.sigma_oct as f32;
    let radius = (hist_width * std::f32::consts::SQRT_2 * (d + 1.0) * 0.5).round() as isize;
    let (cos, sin) = (angle.cos(), angle.sin());
    let (cx, cy) = (e.x.round() as isize, e.y.round() as isize);
    let mut hist = vec![0.0f32; (DESC_WIDTH + 2) * (DESC_WIDTH + 2) * (DESC_BINS + 2)];
    let idx = |r: usize, c: usize, o: usize| (r * (DESC_WIDTH + 2) + c) * (DESC_BINS + 2) + o;
    let exp_scale = -1.0 / (d * d * 0.5);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let rx = (cos * dx as f32 + sin * dy as f32) / hist_width;
            let ry = (-sin * dx as f32 + cos * dy as f32) / hist_width;
            let rbin = ry + d / 2.0 - 0.5;
            let cbin = rx + d / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d {
                continue;
            }
            let (y, x) = (cy + dy, cx + dx);
            if y <= 0 || y >= img.h as isize - 1 || x <= 0 || x >= img.w as isize - 1 {
                continue;
            }
            let (mag, ang) = gradient(img, y as usize, x as usize);
            let wgt = ((rx * rx + ry * ry) * exp_scale).exp() * mag;
            let mut obin = (ang - angle) / (2.0 * PI) * DESC_BINS as f32;
            obin = obin.rem_euclid(DESC_BINS as f32);
            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            for (ri, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (ci, wc) in [(0, 1.0 - fc), (1, fc)] {
                    for (oi, wo) in [(0, 1.0 - fo), (1, fo)] {
                        let r = (r0 as isize + 1 + ri) as usize;
                        let c = (c0 as isize + 1 + ci) as usize;
                        let o = (o0 as usize + oi) % DESC_BINS;
                        hist[idx(r, c, o)] += wgt * wr * wc * wo;
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(DESCRIPTOR_LEN);
    for r in 0..DESC_WIDTH {
        for c in 0..DESC_WIDTH {
            for o in 0..DESC_BINS {
                out.push(hist[idx(r + 1, c + 1, o)]);
            }
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm > 0.0 {
        let cap = 0.2 * norm;
        out.iter_mut().for_each(|v| *v = v.min(cap));
        let norm = out.iter().map(|v| v * v).sum::<f32>().sqrt().max(f32::EPSILON);
        out.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Detects up to `cfg.max_keypoints` keypoints, strongest first. Coordinates
/// follow the pixel-center convention of [`Image`].
pub fn detect_and_describe(img: &Image, cfg: &SiftConfig) -> Vec<Keypoint> {
    let gray = Plane {
        h: img.height(),
        w: img.width(),
        v: img.to_gray(),
    };
    let octaves = build_octaves(gray, cfg);
    let s = cfg.intervals;
    let prefilter = (0.5 * cfg.contrast_threshold / s as f64) as f32;
    let mut found = Vec::new();
    for (o, oct) in octaves.iter().enumerate() {
        let (h, w) = (oct.dog[0].h, oct.dog[0].w);
        for l in 1..=s {
            let plane = &oct.dog[l];
            for y in BORDER..h - BORDER {
                for x in BORDER..w - BORDER {
                    let v = plane.at(y, x);
                    if v.abs() <= prefilter || !is_extremum(&oct.dog, l, y, x, v) {
                        continue;
                    }
                    if let Some(e) = refine(oct, l, y, x, o, cfg) {
                        found.push(e);
                    }
                }
            }
        }
    }
    found.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.octave.cmp(&b.octave))
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    let mut out = Vec::new();
    for e in &found {
        if out.len() >= cfg.max_keypoints {
            break;
        }
        let oct = &octaves[e.octave];
        let gimg = &oct.gauss[e.layer];
        let step = (1usize << e.octave) as f64;
        for angle in orientations(gimg, e) {
            if out.len() >= cfg.max_keypoints {
                break;
            }
            out.push(Keypoint {
                x: e.x * step + 0.5,
                y: e.y * step + 0.5,
                size: e.sigma_oct * step,
                angle: angle as f64,
                score: e.response,
                descriptor: descriptor(gimg, e, angle),
            });
        }
    }
    out
}
