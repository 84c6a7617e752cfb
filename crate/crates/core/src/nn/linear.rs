use super::{Gradients, ParamId, ParamStore, Real};
use rand::Rng;

/// Fully connected layer `y = W x + b`, `W` stored `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.he_normal(
            format!("{name}.weight"),
            &[out_features, in_features],
            in_features,
            rng,
        );
        let bias = store.zeros(format!("{name}.bias"), &[out_features]);
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    /// A layer whose weights and bias start at zero.
    pub fn zeroed<T: Real>(store: &mut ParamStore<T>, name: &str, in_features: usize, out_features: usize) -> Self {
        let weight = store.zeros(format!("{name}.weight"), &[out_features, in_features]);
        let bias = store.zeros(format!("{name}.bias"), &[out_features]);
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &[T]) -> Vec<T> {
        let w = store.get(self.weight);
        let b = store.get(self.bias);
        (0..self.out_features)
            .map(|o| {
                let row = &w[o * self.in_features..(o + 1) * self.in_features];
                b[o] + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>()
            })
            .collect()
    }

    pub fn backward<T: Real>(&self, store: &ParamStore<T>, x: &[T], dy: &[T], grads: &mut Gradients<T>) -> Vec<T> {
        {
            let dw = grads.get_mut(self.weight);
            for (o, &g) in dy.iter().enumerate() {
                for (d, &v) in dw[o * self.in_features..(o + 1) * self.in_features].iter_mut().zip(x) {
                    *d += g * v;
                }
            }
        }
        for (d, &g) in grads.get_mut(self.bias).iter_mut().zip(dy) {
            *d += g;
        }
        let w = store.get(self.weight);
        let mut dx = vec![T::zero(); self.in_features];
        for (o, &g) in dy.iter().enumerate() {
            for (d, &a) in dx.iter_mut().zip(&w[o * self.in_features..(o + 1) * self.in_features]) {
                *d += g * a;
            }
        }
        dx
    }
}
