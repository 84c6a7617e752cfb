//! Multi-scale feature extraction and fusion.

use super::encoder::{Encoder, EncoderCache};
use scalenet_core::error::{Error, Result};
use scalenet_core::image::{build_three_level_pyramid, Image, Rounding};
use scalenet_core::nn::ops::{l2_normalize, l2_normalize_backward, L2Normalized};
use scalenet_core::nn::{FeatureResampler, Gradients, ParamId, ParamStore, Real};
use ndarray::{Array2, Array3, ArrayView2, Zip};

/// Dense `h x w` grid of unit-norm `c`-dimensional descriptors, stored `(c, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatureMap<T> {
    values: Array3<T>,
}

impl<T: Real> DenseFeatureMap<T> {
    /// Wraps a `(c, h, w)` array, normalizing every location.
    pub fn normalized(values: Array3<T>) -> Self {
        let n = l2_normalize(&values);
        warn_degenerate(n.degenerate);
        Self { values: n.output }
    }

    /// Wraps a `(c, h, w)` array that is already unit-normalized per location.
    pub fn from_unit(values: Array3<T>) -> Result<Self> {
        let (_, h, w) = values.dim();
        for i in 0..h {
            for j in 0..w {
                let n: f64 = values.slice(ndarray::s![.., i, j]).iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
                if !n.is_finite() || (n - 1.0).abs() > 1e-5 {
                    return Err(Error::InvalidArgument(format!(
                        "feature at ({i}, {j}) has norm {n}"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array3<T> {
        &self.values
    }

    pub fn channels(&self) -> usize {
        self.values.dim().0
    }

    pub fn grid_height(&self) -> usize {
        self.values.dim().1
    }

    pub fn grid_width(&self) -> usize {
        self.values.dim().2
    }

    /// Descriptor at grid cell `(i, j)`.
    pub fn vector(&self, i: usize, j: usize) -> Vec<T> {
        self.values.slice(ndarray::s![.., i, j]).to_vec()
    }

    /// `(c, h * w)` view with row-major cell index.
    pub fn as_matrix(&self) -> ArrayView2<'_, T> {
        let (c, h, w) = self.values.dim();
        ArrayView2::from_shape((c, h * w), self.values.as_slice().expect("standard layout")).unwrap()
    }
}

fn warn_degenerate(count: usize) {
    if count > 0 {
        log::warn!("{count} zero-norm feature locations replaced by the uniform unit vector");
    }
}

/// Encoder plus the three trainable fusion weights (up, original, down level).
#[derive(Debug, Clone)]
pub struct Msfef {
    pub encoder: Encoder,
    pub weights: ParamId,
    pub rounding: Rounding,
}

/// Activations saved for [`Msfef::backward`].
pub struct FusionCache<T> {
    levels: [LevelCache<T>; 3],
    norm: L2Normalized<T>,
}

struct LevelCache<T> {
    encoded: Array3<T>,
    resampler: FeatureResampler,
    resampled: Array3<T>,
    encoder: EncoderCache<T>,
}

impl Msfef {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, encoder: Encoder, rounding: Rounding) -> Self {
        let third = T::of(1.0 / 3.0);
        let weights = store.add(format!("{prefix}.weights"), &[3], vec![third; 3]);
        Self {
            encoder,
            weights,
            rounding,
        }
    }

    /// Fused, per-location L2-normalized features on the grid of the original level.
    pub fn extract<T: Real>(&self, store: &ParamStore<T>, img: &Image) -> Result<DenseFeatureMap<T>> {
        let pyr = build_three_level_pyramid(img, self.rounding)?;
        let orig = self.encoder.infer(store, self.encoder.input_tensor(&pyr.orig));
        let grid = (orig.dim().1, orig.dim().2);
        let up = self.encoder.infer(store, self.encoder.input_tensor(&pyr.up));
        let down = self.encoder.infer(store, self.encoder.input_tensor(&pyr.down));
        let w = store.get(self.weights);
        let mut sum = FeatureResampler::new((up.dim().1, up.dim().2), grid).forward(&up) * w[0];
        sum.scaled_add(w[1], &orig);
        sum.scaled_add(w[2], &FeatureResampler::new((down.dim().1, down.dim().2), grid).forward(&down));
        ensure_finite(&sum)?;
        Ok(DenseFeatureMap::normalized(sum))
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, img: &Image) -> Result<(DenseFeatureMap<T>, FusionCache<T>)> {
        let pyr = build_three_level_pyramid(img, self.rounding)?;
        let encode = |level: &Image| self.encoder.forward(store, self.encoder.input_tensor(level));
        let (orig, c_orig) = encode(&pyr.orig);
        let grid = (orig.dim().1, orig.dim().2);
        let (up, c_up) = encode(&pyr.up);
        let (down, c_down) = encode(&pyr.down);
        let level = |encoded: Array3<T>, encoder: EncoderCache<T>| {
            let resampler = FeatureResampler::new((encoded.dim().1, encoded.dim().2), grid);
            let resampled = resampler.forward(&encoded);
            LevelCache {
                encoded,
                resampler,
                resampled,
                encoder,
            }
        };
        let levels = [level(up, c_up), level(orig, c_orig), level(down, c_down)];
        let w = store.get(self.weights);
        let mut sum = Array3::zeros(levels[1].resampled.dim());
        for (l, &wl) in levels.iter().zip(w) {
            sum.scaled_add(wl, &l.resampled);
        }
        ensure_finite(&sum)?;
        let norm = l2_normalize(&sum);
        warn_degenerate(norm.degenerate);
        let out = DenseFeatureMap {
            values: norm.output.clone(),
        };
        Ok((out, FusionCache { levels, norm }))
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: FusionCache<T>,
        d_features: &Array3<T>,
        grads: &mut Gradients<T>,
    ) {
        let dsum = l2_normalize_backward(&cache.norm, d_features);
        let w = store.get(self.weights).to_vec();
        for (k, l) in cache.levels.iter().enumerate() {
            let mut acc = T::zero();
            Zip::from(&dsum).and(&l.resampled).for_each(|&d, &v| acc += d * v);
            grads.get_mut(self.weights)[k] += acc;
        }
        for (l, wl) in cache.levels.into_iter().zip(w) {
            let dres = &dsum * wl;
            let denc = l.resampler.backward(&dres);
            debug_assert_eq!(denc.dim(), l.encoded.dim());
            self.encoder.backward(store, &l.encoder, denc, grads);
        }
    }
}

fn ensure_finite<T: Real>(x: &Array3<T>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("fused features".into()))
    }
}

/// Per-location cosine similarities between two equally shaped feature maps.
pub(crate) fn gram<T: Real>(f1: &DenseFeatureMap<T>, f2: &DenseFeatureMap<T>) -> Array2<T> {
    f1.as_matrix().t().dot(&f2.as_matrix())
}
