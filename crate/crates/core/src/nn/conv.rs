use super::{Gradients, ParamId, ParamStore, Real};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array3, ArrayView2, ArrayViewMut2};
use rand::Rng;

/// 2-D convolution (cross-correlation) with square kernel, zero padding and
/// stride, evaluated as an im2col GEMM.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Saved activations for [`Conv2d::backward`].
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_h: usize,
    in_w: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.he_normal(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
            rng,
        );
        let bias = bias.then(|| store.zeros(format!("{name}.bias"), &[out_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = self.padding;
        let s = self.stride;
        ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1)
    }

    pub fn infer<T: Real>(&self, store: &ParamStore<T>, x: &Array3<T>) -> Array3<T> {
        self.forward(store, x).0
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: &Array3<T>) -> (Array3<T>, ConvCache<T>) {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = self.output_size(h, w);
        let n = oh * ow;
        let kk = c * self.kernel * self.kernel;
        let xs = x.as_slice().expect("standard layout");
        let cols = im2col(xs, c, h, w, self.kernel, self.stride, self.padding, oh, ow);
        let wv = ArrayView2::from_shape((self.out_channels, kk), store.get(self.weight)).unwrap();
        let cv = ArrayView2::from_shape((kk, n), &cols).unwrap();
        let mut y = wv.dot(&cv);
        if let Some(b) = self.bias {
            for (mut row, &bv) in y.rows_mut().into_iter().zip(store.get(b)) {
                row.mapv_inplace(|v| v + bv);
            }
        }
        let y = y.into_shape_with_order((self.out_channels, oh, ow)).unwrap();
        (y, ConvCache { cols, in_h: h, in_w: w })
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `need_dx` is set.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &ConvCache<T>,
        dy: &Array3<T>,
        grads: &mut Gradients<T>,
        need_dx: bool,
    ) -> Option<Array3<T>> {
        let (oc, oh, ow) = dy.dim();
        let n = oh * ow;
        let kk = self.in_channels * self.kernel * self.kernel;
        let dys = dy.as_slice().expect("standard layout");
        let dyv = ArrayView2::from_shape((oc, n), dys).unwrap();
        let cv = ArrayView2::from_shape((kk, n), &cache.cols).unwrap();
        {
            let dw = grads.get_mut(self.weight);
            let mut dwv = ArrayViewMut2::from_shape((oc, kk), dw).unwrap();
            general_mat_mul(T::one(), &dyv, &cv.t(), T::one(), &mut dwv);
        }
        if let Some(b) = self.bias {
            let db = grads.get_mut(b);
            for (o, row) in dyv.rows().into_iter().enumerate() {
                db[o] += row.sum();
            }
        }
        if !need_dx {
            return None;
        }
        let wv = ArrayView2::from_shape((oc, kk), store.get(self.weight)).unwrap();
        let dcols = wv.t().dot(&dyv);
        let dcols = dcols.as_standard_layout();
        let dx = col2im(
            dcols.as_slice().unwrap(),
            self.in_channels,
            cache.in_h,
            cache.in_w,
            self.kernel,
            self.stride,
            self.padding,
            oh,
            ow,
        );
        Some(Array3::from_shape_vec((self.in_channels, cache.in_h, cache.in_w), dx).unwrap())
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let n = oh * ow;
    let mut cols = vec![T::zero(); c * k * k * n];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let n = oh * ow;
    let mut x = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn direct_conv(x: &Array3<f64>, wt: &[f64], bias: &[f64], conv: &Conv2d) -> Array3<f64> {
        let (c, h, w) = x.dim();
        let (oh, ow) = conv.output_size(h, w);
        let k = conv.kernel;
        let mut y = Array3::zeros((conv.out_channels, oh, ow));
        for o in 0..conv.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[o];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += wt[((o * c + ci) * k + ky) * k + kx]
                                        * x[[ci, iy as usize, ix as usize]];
                                }
                            }
                        }
                    }
                    y[[o, oy, ox]] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, s, p, h, w) in [(3, 2, 1, 9, 7), (5, 1, 2, 4, 4), (1, 1, 0, 3, 5), (7, 2, 3, 11, 10)] {
            let mut store = ParamStore::<f64>::new();
            let conv = Conv2d::new(&mut store, "c", 3, 4, k, s, p, true, &mut rng);
            store.get_mut(conv.bias.unwrap()).copy_from_slice(&[0.1, -0.2, 0.3, 0.0]);
            let x = Array3::from_shape_fn((3, h, w), |(a, b, c)| ((a * 31 + b * 7 + c * 3) % 11) as f64 - 5.0);
            let y = conv.infer(&store, &x);
            let want = direct_conv(&x, store.get(conv.weight), store.get(conv.bias.unwrap()), &conv);
            assert_eq!(y.dim(), want.dim());
            for (a, b) in y.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::new(&mut store, "c", 2, 3, 3, 2, 1, true, &mut rng);
        let x = Array3::from_shape_fn((2, 5, 6), |(a, b, c)| ((a + 2 * b + 3 * c) as f64 * 0.37).sin());
        let dy = Array3::from_shape_fn(conv_out(&conv, 5, 6), |(a, b, c)| ((a * 5 + b * 3 + c) as f64 * 0.71).cos());
        let loss = |st: &ParamStore<f64>, xx: &Array3<f64>| (conv.infer(st, xx) * &dy).sum();
        let (_, cache) = conv.forward(&store, &x);
        let mut grads = Gradients::zeros_like(&store);
        let dx = conv.backward(&store, &cache, &dy, &mut grads, true).unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[i] += eps;
            xm.as_slice_mut().unwrap()[i] -= eps;
            let num = (loss(&store, &xp) - loss(&store, &xm)) / (2.0 * eps);
            assert!((num - dx.as_slice().unwrap()[i]).abs() < 1e-7);
        }
        for id in [conv.weight, conv.bias.unwrap()] {
            for i in 0..store.get(id).len() {
                let mut sp = store.clone();
                sp.get_mut(id)[i] += eps;
                let mut sm = store.clone();
                sm.get_mut(id)[i] -= eps;
                let num = (loss(&sp, &x) - loss(&sm, &x)) / (2.0 * eps);
                assert!((num - grads.get(id)[i]).abs() < 1e-7);
            }
        }
    }

    fn conv_out(conv: &Conv2d, h: usize, w: usize) -> (usize, usize, usize) {
        let (oh, ow) = conv.output_size(h, w);
        (conv.out_channels, oh, ow)
    }
}
