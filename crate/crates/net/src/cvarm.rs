//! Exhaustive patch correlation and covisibility attention.
//!
//! Cells of the second map are flattened row-major: cell `(ik, jk)` of an
//! `h x w` grid is channel `k = ik * w + jk` of the correlation volume.

use super::msfef::{gram, DenseFeatureMap};
use scalenet_core::error::{Error, Result};
use scalenet_core::nn::ops::sigmoid;
use scalenet_core::nn::{Conv2d, ConvCache, Gradients, ParamStore, Real};
use ndarray::{Array2, Array3};
use rand::Rng;

/// `h x w x (h * w)` volume of patch-pair similarities, stored as an
/// `(h * w, h * w)` matrix whose row is the cell of the first map.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap<T> {
    values: Array2<T>,
    height: usize,
    width: usize,
}

impl<T: Real> CorrelationMap<T> {
    pub fn from_matrix(values: Array2<T>, height: usize, width: usize) -> Result<Self> {
        let n = height * width;
        if values.dim() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "correlation matrix {:?} for a {height}x{width} grid",
                values.dim()
            )));
        }
        Ok(Self { values, height, width })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of channels, `h * w`.
    pub fn channels(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, ik: usize, jk: usize) -> usize {
        debug_assert!(ik < self.height && jk < self.width);
        ik * self.width + jk
    }

    pub fn position(&self, k: usize) -> (usize, usize) {
        (k / self.width, k % self.width)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.values[[i * self.width + j, k]]
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.values
    }

    /// The volume with `h * w` channels over the `h x w` grid, `(k, i, j)`.
    pub fn to_volume(&self) -> Array3<T> {
        let t = self.values.t().as_standard_layout().into_owned();
        t.into_shape_with_order((self.channels(), self.height, self.width)).unwrap()
    }
}

pub fn compute_correlation_map<T: Real>(f1: &DenseFeatureMap<T>, f2: &DenseFeatureMap<T>) -> Result<CorrelationMap<T>> {
    if f1.values().dim() != f2.values().dim() {
        return Err(Error::ShapeMismatch(format!(
            "feature maps {:?} and {:?}",
            f1.values().dim(),
            f2.values().dim()
        )));
    }
    CorrelationMap::from_matrix(gram(f1, f2), f1.grid_height(), f1.grid_width())
}

/// Gradients of the correlation with respect to both `(c, h, w)` feature maps.
pub fn correlation_backward<T: Real>(
    f1: &DenseFeatureMap<T>,
    f2: &DenseFeatureMap<T>,
    d_corr: &Array2<T>,
) -> (Array3<T>, Array3<T>) {
    let dim = f1.values().dim();
    let d1 = f2.as_matrix().dot(&d_corr.t());
    let d2 = f1.as_matrix().dot(d_corr);
    (
        d1.into_shape_with_order(dim).unwrap(),
        d2.into_shape_with_order(dim).unwrap(),
    )
}

/// Sigmoid scores on the `h x w` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CovisibilityMask<T> {
    scores: Array2<T>,
}

impl<T: Real> CovisibilityMask<T> {
    pub fn constant(height: usize, width: usize, v: T) -> Self {
        Self {
            scores: Array2::from_elem((height, width), v),
        }
    }

    pub fn from_scores(scores: Array2<T>) -> Self {
        Self { scores }
    }

    pub fn scores(&self) -> &Array2<T> {
        &self.scores
    }
}

/// The two 5x5 single-channel filters (with bias) of the attention blocks.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub cab1: Conv2d,
    pub cab2: Conv2d,
}

impl AttentionParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, rng: &mut impl Rng) -> Self {
        Self {
            cab1: Conv2d::new(store, &format!("{prefix}.cab1"), 1, 1, 5, 1, 2, true, rng),
            cab2: Conv2d::new(store, &format!("{prefix}.cab2"), 1, 1, 5, 1, 2, true, rng),
        }
    }
}

/// Maximum over channels `k` for each cell of the first map, with argmax.
pub fn channel_max<T: Real>(c: &CorrelationMap<T>) -> (Array2<T>, Vec<usize>) {
    let mut vals = Vec::with_capacity(c.channels());
    let mut args = Vec::with_capacity(c.channels());
    for row in c.values.rows() {
        let (k, v) = argmax(row.iter().copied());
        vals.push(v);
        args.push(k);
    }
    (Array2::from_shape_vec((c.height, c.width), vals).unwrap(), args)
}

/// Maximum over the grid for each channel `k`, placed at cell `(ik, jk)`
/// of an `h x w` map, with argmax (row of the matrix).
pub fn spatial_max<T: Real>(c: &CorrelationMap<T>) -> (Array2<T>, Vec<usize>) {
    let mut vals = Vec::with_capacity(c.channels());
    let mut args = Vec::with_capacity(c.channels());
    for col in c.values.columns() {
        let (p, v) = argmax(col.iter().copied());
        vals.push(v);
        args.push(p);
    }
    (Array2::from_shape_vec((c.height, c.width), vals).unwrap(), args)
}

fn argmax<T: Real>(it: impl Iterator<Item = T>) -> (usize, T) {
    let mut best = (0, T::neg_infinity());
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

pub fn covisibility_masks<T: Real>(
    c: &CorrelationMap<T>,
    params: &AttentionParams,
    store: &ParamStore<T>,
) -> (CovisibilityMask<T>, CovisibilityMask<T>) {
    let fwd = AttentionForward::run(c, params, store);
    (fwd.m1, fwd.m2)
}

/// `out(i, j, k) = m2(ik, jk) * m1(i, j) * c(i, j, k)`.
pub fn apply_covisibility<T: Real>(
    c: &CorrelationMap<T>,
    m1: &CovisibilityMask<T>,
    m2: &CovisibilityMask<T>,
) -> Result<CorrelationMap<T>> {
    let grid = (c.height, c.width);
    if m1.scores.dim() != grid || m2.scores.dim() != grid {
        return Err(Error::ShapeMismatch(format!(
            "masks {:?}/{:?} for a {grid:?} correlation grid",
            m1.scores.dim(),
            m2.scores.dim()
        )));
    }
    let s1 = m1.scores.as_slice().expect("standard layout");
    let s2 = m2.scores.as_slice().expect("standard layout");
    let mut out = c.values.clone();
    for (p, mut row) in out.rows_mut().into_iter().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = s2[k] * (s1[p] * *v);
        }
    }
    Ok(CorrelationMap {
        values: out,
        height: c.height,
        width: c.width,
    })
}

/// Forward state of both attention blocks, kept for the backward pass.
pub struct AttentionForward<T> {
    pub m1: CovisibilityMask<T>,
    pub m2: CovisibilityMask<T>,
    arg1: Vec<usize>,
    arg2: Vec<usize>,
    cache1: ConvCache<T>,
    cache2: ConvCache<T>,
}

impl<T: Real> AttentionForward<T> {
    pub fn run(c: &CorrelationMap<T>, params: &AttentionParams, store: &ParamStore<T>) -> Self {
        let (h, w) = (c.height, c.width);
        let (max1, arg1) = channel_max(c);
        let (max2, arg2) = spatial_max(c);
        let block = |conv: &Conv2d, m: Array2<T>| {
            let (z, cache) = conv.forward(store, &m.into_shape_with_order((1, h, w)).unwrap());
            let s = z.mapv(sigmoid).into_shape_with_order((h, w)).unwrap();
            (CovisibilityMask { scores: s }, cache)
        };
        let (m1, cache1) = block(&params.cab1, max1);
        let (m2, cache2) = block(&params.cab2, max2);
        Self {
            m1,
            m2,
            arg1,
            arg2,
            cache1,
            cache2,
        }
    }

    /// Given the gradient of the masked volume, returns the gradient of the raw
    /// correlation (through both the product and the masks) and accumulates
    /// the filter gradients.
    pub fn backward(
        &self,
        c: &CorrelationMap<T>,
        params: &AttentionParams,
        store: &ParamStore<T>,
        d_out: &Array2<T>,
        grads: &mut Gradients<T>,
    ) -> Array2<T> {
        let (h, w) = (c.height, c.width);
        let s1 = self.m1.scores.as_slice().unwrap();
        let s2 = self.m2.scores.as_slice().unwrap();
        let n = c.channels();
        let mut dc = Array2::zeros((n, n));
        let mut dm1 = vec![T::zero(); n];
        let mut dm2 = vec![T::zero(); n];
        for p in 0..n {
            for k in 0..n {
                let g = d_out[[p, k]];
                let v = c.values[[p, k]];
                dc[[p, k]] = g * s1[p] * s2[k];
                dm1[p] += g * s2[k] * v;
                dm2[k] += g * s1[p] * v;
            }
        }
        let through = |conv: &Conv2d, cache: &ConvCache<T>, dm: Vec<T>, s: &[T], grads: &mut Gradients<T>| {
            let dz: Vec<T> = dm.iter().zip(s).map(|(&d, &m)| d * m * (T::one() - m)).collect();
            let dz = Array3::from_shape_vec((1, h, w), dz).unwrap();
            conv.backward(store, cache, &dz, grads, true).expect("dx requested")
        };
        let dmax1 = through(&params.cab1, &self.cache1, dm1, s1, grads);
        let dmax2 = through(&params.cab2, &self.cache2, dm2, s2, grads);
        for (p, (&k, &g)) in self.arg1.iter().zip(dmax1.iter()).enumerate() {
            dc[[p, k]] += g;
        }
        for (k, (&p, &g)) in self.arg2.iter().zip(dmax2.iter()).enumerate() {
            dc[[p, k]] += g;
        }
        dc
    }
}
