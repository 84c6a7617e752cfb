//! RGB raster images and bilinear resampling.
//!
//! Pixel `(row, col)` covers the continuous square `[col, col + 1) x [row, row + 1)`,
//! so its center sits at `(col + 0.5, row + 0.5)`. Resizing by a factor `r` maps a
//! continuous coordinate `x` to `x * r`; keypoint restoration relies on this.

use crate::error::{Error, Result};
use std::path::Path;

/// Minimum side length accepted by the scale network.
pub const MIN_SIDE: usize = 32;

/// Policy for turning a non-integer target dimension into pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// `floor(x + 0.5)`.
    #[default]
    HalfUp,
    Floor,
    Ceil,
}

impl Rounding {
    pub fn apply(self, x: f64) -> usize {
        let v = match self {
            Rounding::HalfUp => (x + 0.5).floor(),
            Rounding::Floor => x.floor(),
            Rounding::Ceil => x.ceil(),
        };
        v.max(0.0) as usize
    }
}

/// Target dimension of a side of length `len` resized by `factor`.
pub fn scaled_dim(len: usize, factor: f64, rounding: Rounding) -> usize {
    rounding.apply(len as f64 * factor)
}

/// An `H x W x 3` image with intensities in `[0, 1]`, stored channel-planar.
#[derive(Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.height, self.width)
    }
}

impl Image {
    /// Builds an image from planar data (`3 * height * width` values).
    pub fn from_planar(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage("empty image".into()));
        }
        if data.len() != 3 * height * width {
            return Err(Error::InvalidImage(format!(
                "expected {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidImage(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let n = height * width;
        let mut data = Vec::with_capacity(3 * n);
        for c in rgb {
            data.extend(std::iter::repeat(c.clamp(0.0, 1.0)).take(n));
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds an image by evaluating `f(row, col) -> rgb`; values are clamped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let n = height * width;
        let mut data = vec![0.0; 3 * n];
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                for c in 0..3 {
                    data[c * n + y * width + x] = px[c].clamp(0.0, 1.0);
                }
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Planar channel data, `3 * H * W` values.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[c * self.height * self.width + row * self.width + col]
    }

    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f32) {
        let n = self.height * self.width;
        self.data[c * n + row * self.width + col] = v.clamp(0.0, 1.0);
    }

    /// Errors unless both sides are at least `min` pixels.
    pub fn ensure_min_side(&self, min: usize, context: &str) -> Result<()> {
        if self.height < min || self.width < min {
            return Err(Error::ImageTooSmall {
                height: self.height,
                width: self.width,
                reason: format!("{context} needs sides >= {min}"),
            });
        }
        Ok(())
    }

    /// Rec. 601 luma.
    pub fn to_gray(&self) -> Vec<f32> {
        let n = self.height * self.width;
        (0..n)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[n + i] + 0.114 * self.data[2 * n + i])
            .collect()
    }

    /// Bilinear resize to an explicit size. Downscaling widens the triangle
    /// kernel by the reduction factor so the result is not aliased.
    pub fn resize(&self, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot resize to {height}x{width}"
            )));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let wy = AxisWeights::new(self.height, height, true);
        let wx = AxisWeights::new(self.width, width, true);
        let n_in = self.height * self.width;
        let mut out = Vec::with_capacity(3 * height * width);
        let mut tmp = vec![0.0f32; self.height * width];
        for c in 0..3 {
            let src = &self.data[c * n_in..(c + 1) * n_in];
            for y in 0..self.height {
                let row = &src[y * self.width..(y + 1) * self.width];
                for (x, taps) in wx.taps.iter().enumerate() {
                    tmp[y * width + x] = taps.iter().map(|&(i, w)| row[i] * w as f32).sum();
                }
            }
            for taps in &wy.taps {
                for x in 0..width {
                    let v: f32 = taps.iter().map(|&(i, w)| tmp[i * width + x] * w as f32).sum();
                    out.push(v.clamp(0.0, 1.0));
                }
            }
        }
        Ok(Image {
            height,
            width,
            data: out,
        })
    }

    /// Resize both sides by `factor`, rounding dimensions with `rounding`.
    pub fn resize_by(&self, factor: f64, rounding: Rounding) -> Result<Image> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidArgument(format!("resize factor {factor}")));
        }
        let h = scaled_dim(self.height, factor, rounding);
        let w = scaled_dim(self.width, factor, rounding);
        self.resize(h, w)
    }

    /// Bilinear sample of channel `c` at continuous coordinates (pixel centers at
    /// `+0.5`). Returns `None` outside the image.
    pub fn sample(&self, c: usize, x: f64, y: f64) -> Option<f32> {
        let fx = x - 0.5;
        let fy = y - 0.5;
        if fx < -0.5 || fy < -0.5 || fx > self.width as f64 - 0.5 || fy > self.height as f64 - 0.5 {
            return None;
        }
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = (fx - x0 as f64) as f32;
        let ay = (fy - y0 as f64) as f32;
        let g = |yy: usize, xx: usize| self.get(c, yy, xx);
        let top = g(y0, x0) * (1.0 - ax) + g(y0, x1) * ax;
        let bot = g(y1, x0) * (1.0 - ax) + g(y1, x1) * ax;
        Some(top * (1.0 - ay) + bot * ay)
    }

    /// Renders the source window starting at continuous `(x0, y0)` magnified by
    /// `zoom` into a `height x width` image (bilinear, upsampling only).
    pub fn zoom_window(&self, x0: f64, y0: f64, zoom: f64, height: usize, width: usize) -> Image {
        let mut out = Image::constant(height, width, [0.0; 3]);
        for c in 0..3 {
            for r in 0..height {
                let sy = y0 + (r as f64 + 0.5) / zoom;
                for q in 0..width {
                    let sx = x0 + (q as f64 + 0.5) / zoom;
                    let v = self.sample(c, sx, sy).unwrap_or(0.0);
                    out.set(c, r, q, v);
                }
            }
        }
        out
    }

    /// Copies `src` into `self` with its top-left corner at `(row, col)`.
    pub fn paste(&mut self, src: &Image, row: usize, col: usize) -> Result<()> {
        if row + src.height > self.height || col + src.width > self.width {
            return Err(Error::InvalidArgument(format!(
                "{}x{} at ({row}, {col}) does not fit in {}x{}",
                src.height, src.width, self.height, self.width
            )));
        }
        let n_dst = self.height * self.width;
        let n_src = src.height * src.width;
        for c in 0..3 {
            for y in 0..src.height {
                let d = c * n_dst + (row + y) * self.width + col;
                let s = c * n_src + y * src.width;
                self.data[d..d + src.width].copy_from_slice(&src.data[s..s + src.width]);
            }
        }
        Ok(())
    }

    /// Uniformly rescales to fit inside `size x size` and pads bottom/right with
    /// black. Returns the padded image and the applied factor.
    pub fn letterbox(&self, size: usize) -> Result<(Image, f64)> {
        let factor = size as f64 / self.height.max(self.width) as f64;
        let h = scaled_dim(self.height, factor, Rounding::HalfUp).clamp(1, size);
        let w = scaled_dim(self.width, factor, Rounding::HalfUp).clamp(1, size);
        let resized = self.resize(h, w)?;
        if h == size && w == size {
            return Ok((resized, factor));
        }
        let mut canvas = Image::constant(size, size, [0.0; 3]);
        canvas.paste(&resized, 0, 0)?;
        Ok((canvas, factor))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Codec {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        let (w, h) = img.dimensions();
        Image::from_fn(h as usize, w as usize, |y, x| {
            let p = img.get_pixel(x as u32, y as u32).0;
            [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0]
        })
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let q = |c| (self.get(c, y as usize, x as usize) * 255.0).round() as u8;
            image::Rgb([q(0), q(1), q(2)])
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8().save(path).map_err(|source| Error::Codec {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Per-output-sample taps `(source index, weight)` of a separable 1-D
/// resampler. Weights of each output sample sum to one.
#[derive(Debug, Clone)]
pub(crate) struct AxisWeights {
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl AxisWeights {
    /// Half-pixel-centered linear interpolation from `n_in` to `n_out` samples.
    /// With `antialias` and a reduction, the triangle support widens to `n_in / n_out`.
    pub fn new(n_in: usize, n_out: usize, antialias: bool) -> Self {
        let scale = n_in as f64 / n_out as f64;
        let support = if antialias && scale > 1.0 { scale } else { 1.0 };
        let taps = (0..n_out)
            .map(|o| {
                let center = (o as f64 + 0.5) * scale - 0.5;
                if support > 1.0 {
                    let lo = (center - support).ceil().max(0.0) as usize;
                    let hi = ((center + support).floor() as usize).min(n_in - 1);
                    let mut taps: Vec<(usize, f64)> = (lo..=hi)
                        .filter_map(|i| {
                            let w = 1.0 - (i as f64 - center).abs() / support;
                            (w > 0.0).then_some((i, w))
                        })
                        .collect();
                    let total: f64 = taps.iter().map(|t| t.1).sum();
                    taps.iter_mut().for_each(|t| t.1 /= total);
                    taps
                } else {
                    let c = center.clamp(0.0, (n_in - 1) as f64);
                    let i0 = c.floor() as usize;
                    let i1 = (i0 + 1).min(n_in - 1);
                    let a = c - i0 as f64;
                    if i1 == i0 || a == 0.0 {
                        vec![(i0, 1.0)]
                    } else {
                        vec![(i0, 1.0 - a), (i1, a)]
                    }
                }
            })
            .collect();
        Self { taps }
    }
}

/// The three-level pyramid consumed by multi-scale feature extraction.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub up: Image,
    pub orig: Image,
    pub down: Image,
}

/// Upsamples once (x2) and downsamples once (x0.5) with bilinear resampling.
/// Rejects inputs with a side below [`MIN_SIDE`], and any input whose
/// downsampled level would be narrower than one stride-16 feature cell.
pub fn build_three_level_pyramid(img: &Image, rounding: Rounding) -> Result<Pyramid> {
    img.ensure_min_side(MIN_SIDE, "pyramid input")?;
    let dh = scaled_dim(img.height, 0.5, rounding);
    let dw = scaled_dim(img.width, 0.5, rounding);
    if dh < MIN_SIDE / 2 || dw < MIN_SIDE / 2 {
        return Err(Error::ImageTooSmall {
            height: img.height,
            width: img.width,
            reason: format!("downsampled level {dh}x{dw} is below {}px", MIN_SIDE / 2),
        });
    }
    let up = img.resize(
        scaled_dim(img.height, 2.0, rounding),
        scaled_dim(img.width, 2.0, rounding),
    )?;
    let down = img.resize(dh, dw)?;
    Ok(Pyramid {
        up,
        orig: img.clone(),
        down,
    })
}
