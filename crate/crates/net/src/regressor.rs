//! Scale-ratio regression head over a correlation volume.

use super::cvarm::CorrelationMap;
use scalenet_core::error::{Error, Result};
use scalenet_core::nn::ops::{relu_backward, relu_inplace};
use scalenet_core::nn::{Conv2d, ConvCache, Gradients, Linear, ParamStore, Real};
use scalenet_core::ratio::ScaleRatio;
use ndarray::Array3;
use rand::Rng;

/// Two stride-2 3x3 convolutions over the `h x w` grid with `h * w` input
/// channels, global average pooling, then `width -> width / 2 -> 1` fully
/// connected layers. The last layer starts at zero so the initial prediction
/// is `log2 s = 0`.
#[derive(Debug, Clone)]
pub struct Regressor {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct RegressorCache<T> {
    c1: ConvCache<T>,
    a1: Array3<T>,
    c2: ConvCache<T>,
    a2: Array3<T>,
    pooled: Vec<T>,
    hidden: Vec<T>,
}

impl Regressor {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        grid_cells: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let hidden = (width / 2).max(1);
        Self {
            conv1: Conv2d::new(store, &format!("{prefix}.conv1"), grid_cells, width, 3, 2, 1, true, rng),
            conv2: Conv2d::new(store, &format!("{prefix}.conv2"), width, width, 3, 2, 1, true, rng),
            fc1: Linear::new(store, &format!("{prefix}.fc1"), width, hidden, rng),
            fc2: Linear::zeroed(store, &format!("{prefix}.fc2"), hidden, 1),
        }
    }

    fn check<T: Real>(&self, c: &CorrelationMap<T>) -> Result<()> {
        if c.channels() != self.conv1.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "regressor expects {} grid cells, got {}x{}",
                self.conv1.in_channels,
                c.height(),
                c.width()
            )));
        }
        Ok(())
    }

    /// Raw output `r`, the predicted base-2 logarithm of the ratio.
    pub fn forward<T: Real>(&self, store: &ParamStore<T>, c: &CorrelationMap<T>) -> Result<(T, RegressorCache<T>)> {
        self.check(c)?;
        let (mut a1, c1) = self.conv1.forward(store, &c.to_volume());
        relu_inplace(&mut a1);
        let (mut a2, c2) = self.conv2.forward(store, &a1);
        relu_inplace(&mut a2);
        let pooled = global_average(&a2);
        let mut hidden = self.fc1.forward(store, &pooled);
        hidden.iter_mut().for_each(|v| {
            if *v < T::zero() {
                *v = T::zero();
            }
        });
        let r = self.fc2.forward(store, &hidden)[0];
        if !r.is_finite() {
            return Err(Error::NonFinite("regressor output".into()));
        }
        Ok((
            r,
            RegressorCache {
                c1,
                a1,
                c2,
                a2,
                pooled,
                hidden,
            },
        ))
    }

    /// Returns the gradient with respect to the `(h*w, h*w)` correlation matrix.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &RegressorCache<T>,
        dr: T,
        grads: &mut Gradients<T>,
    ) -> ndarray::Array2<T> {
        let mut dh = self.fc2.backward(store, &cache.hidden, &[dr], grads);
        for (d, &h) in dh.iter_mut().zip(&cache.hidden) {
            if h <= T::zero() {
                *d = T::zero();
            }
        }
        let dpool = self.fc1.backward(store, &cache.pooled, &dh, grads);
        let (ch, oh, ow) = cache.a2.dim();
        let scale = T::one() / T::of((oh * ow) as f64);
        let da2 = Array3::from_shape_fn((ch, oh, ow), |(c, _, _)| dpool[c] * scale);
        let da2 = relu_backward(&cache.a2, &da2);
        let da1 = self.conv2.backward(store, &cache.c2, &da2, grads, true).expect("dx requested");
        let da1 = relu_backward(&cache.a1, &da1);
        let dvol = self.conv1.backward(store, &cache.c1, &da1, grads, true).expect("dx requested");
        let (n, h, w) = dvol.dim();
        let dvol = dvol.into_shape_with_order((n, h * w)).unwrap();
        dvol.t().as_standard_layout().into_owned()
    }
}

fn global_average<T: Real>(x: &Array3<T>) -> Vec<T> {
    let (c, h, w) = x.dim();
    let inv = T::one() / T::of((h * w) as f64);
    let s = x.as_slice().expect("standard layout");
    (0..c).map(|i| s[i * h * w..(i + 1) * h * w].iter().copied().sum::<T>() * inv).collect()
}

/// Regresses `log2 s` and converts it to a clamped [`ScaleRatio`].
pub fn regress_scale_ratio<T: Real>(
    regressor: &Regressor,
    store: &ParamStore<T>,
    c: &CorrelationMap<T>,
) -> Result<ScaleRatio> {
    let (r, _) = regressor.forward(store, c)?;
    ScaleRatio::from_log2_clamped(r.f64())
}
