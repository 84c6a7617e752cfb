use super::Real;
use crate::image::AxisWeights;
use ndarray::Array3;

/// Separable bilinear resampling of `(c, h, w)` feature maps (half-pixel
/// centers, no antialiasing) together with its adjoint for backpropagation.
#[derive(Debug, Clone)]
pub struct FeatureResampler {
    rows: AxisWeights,
    cols: AxisWeights,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
}

impl FeatureResampler {
    pub fn new(in_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        Self {
            rows: AxisWeights::new(in_hw.0, out_hw.0, false),
            cols: AxisWeights::new(in_hw.1, out_hw.1, false),
            in_hw,
            out_hw,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.in_hw == self.out_hw
    }

    pub fn forward<T: Real>(&self, x: &Array3<T>) -> Array3<T> {
        if self.is_identity() {
            return x.clone();
        }
        let c = x.dim().0;
        let (oh, ow) = self.out_hw;
        let mut y = Array3::zeros((c, oh, ow));
        for ch in 0..c {
            for (oy, ty) in self.rows.taps.iter().enumerate() {
                for (ox, tx) in self.cols.taps.iter().enumerate() {
                    let mut acc = T::zero();
                    for &(iy, wy) in ty {
                        for &(ix, wx) in tx {
                            acc += x[[ch, iy, ix]] * T::of(wy * wx);
                        }
                    }
                    y[[ch, oy, ox]] = acc;
                }
            }
        }
        y
    }

    /// Adjoint (transpose) of [`FeatureResampler::forward`].
    pub fn backward<T: Real>(&self, dy: &Array3<T>) -> Array3<T> {
        if self.is_identity() {
            return dy.clone();
        }
        let c = dy.dim().0;
        let mut dx = Array3::zeros((c, self.in_hw.0, self.in_hw.1));
        for ch in 0..c {
            for (oy, ty) in self.rows.taps.iter().enumerate() {
                for (ox, tx) in self.cols.taps.iter().enumerate() {
                    let g = dy[[ch, oy, ox]];
                    for &(iy, wy) in ty {
                        for &(ix, wx) in tx {
                            dx[[ch, iy, ix]] += g * T::of(wy * wx);
                        }
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjoint_identity() {
        // <R x, y> == <x, R^T y>
        for (a, b) in [((5, 5), (10, 10)), ((20, 20), (10, 10)), ((3, 7), (5, 4))] {
            let r = FeatureResampler::new(a, b);
            let x = Array3::from_shape_fn((2, a.0, a.1), |(c, i, j)| ((c * 13 + i * 5 + j) as f64 * 0.3).sin());
            let y = Array3::from_shape_fn((2, b.0, b.1), |(c, i, j)| ((c * 3 + i * 7 + j * 2) as f64 * 0.2).cos());
            let lhs = (r.forward(&x) * &y).sum();
            let rhs = (r.backward(&y) * &x).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
