//! Pointwise activations and per-location normalization.

use super::Real;
use ndarray::{Array3, Zip};

pub fn relu_inplace<T: Real>(x: &mut Array3<T>) {
    // Written as a comparison so NaN propagates instead of being clamped.
    x.mapv_inplace(|v| if v < T::zero() { T::zero() } else { v });
}

/// Gradient of ReLU given its output.
pub fn relu_backward<T: Real>(out: &Array3<T>, dy: &Array3<T>) -> Array3<T> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(out).for_each(|d, &o| {
        if o <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Result of normalizing each channel vector of a `(c, h, w)` map to unit L2 norm.
#[derive(Debug, Clone)]
pub struct L2Normalized<T> {
    pub output: Array3<T>,
    /// Pre-normalization norm at each location (`h * w`, row-major).
    pub norms: Vec<T>,
    /// Number of locations whose norm was zero and were replaced by the uniform unit vector.
    pub degenerate: usize,
}

/// Norms below this are treated as zero vectors.
pub const ZERO_NORM: f64 = 1e-12;

pub fn l2_normalize<T: Real>(x: &Array3<T>) -> L2Normalized<T> {
    let (c, h, w) = x.dim();
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(h * w);
    let mut degenerate = 0;
    let uniform = T::one() / T::of(c as f64).sqrt();
    for i in 0..h {
        for j in 0..w {
            let mut col = out.slice_mut(ndarray::s![.., i, j]);
            let n = col.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms.push(n);
            if n.f64() <= ZERO_NORM {
                degenerate += 1;
                col.fill(uniform);
            } else {
                col.mapv_inplace(|v| v / n);
            }
        }
    }
    L2Normalized {
        output: out,
        norms,
        degenerate,
    }
}

/// Backward of [`l2_normalize`]: `dx = (dy - y (y . dy)) / |x|`, zero at degenerate locations.
pub fn l2_normalize_backward<T: Real>(fwd: &L2Normalized<T>, dy: &Array3<T>) -> Array3<T> {
    let (_, h, w) = dy.dim();
    let mut dx = Array3::zeros(dy.dim());
    for i in 0..h {
        for j in 0..w {
            let n = fwd.norms[i * w + j];
            if n.f64() <= ZERO_NORM {
                continue;
            }
            let y = fwd.output.slice(ndarray::s![.., i, j]);
            let g = dy.slice(ndarray::s![.., i, j]);
            let dot: T = y.iter().zip(g.iter()).map(|(&a, &b)| a * b).sum();
            let mut d = dx.slice_mut(ndarray::s![.., i, j]);
            for ((dv, &yv), &gv) in d.iter_mut().zip(y.iter()).zip(g.iter()) {
                *dv = (gv - yv * dot) / n;
            }
        }
    }
    dx
}
