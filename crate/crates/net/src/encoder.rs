//! Convolutional encoders mapping an image to a stride-16 feature grid.

use scalenet_core::error::{Error, Result};
use scalenet_core::image::Image;
use scalenet_core::nn::ops::{relu_backward, relu_inplace};
use scalenet_core::nn::{Conv2d, ConvCache, Gradients, ParamStore, Real};
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Total downsampling factor from image pixels to feature cells.
pub const ENCODER_STRIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Four strided 3x3 convolutions trained from scratch.
    SmallRandom,
    /// ResNet-18 truncated after its third stage (256 channels). Batch norm is
    /// folded into convolution biases; only the last residual block trains.
    PretrainedDeep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Output widths of the four blocks of `small-random`; the last entry is
    /// the feature channel count. Ignored by `pretrained-deep`.
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
}

fn default_widths() -> Vec<usize> {
    vec![16, 32, 64, 128]
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::SmallRandom,
            widths: default_widths(),
        }
    }
}

impl EncoderConfig {
    pub fn small_random(widths: Vec<usize>) -> Self {
        Self {
            kind: EncoderKind::SmallRandom,
            widths,
        }
    }

    pub fn pretrained_deep() -> Self {
        Self {
            kind: EncoderKind::PretrainedDeep,
            widths: default_widths(),
        }
    }

    pub fn output_channels(&self) -> usize {
        match self.kind {
            EncoderKind::SmallRandom => self.widths.last().copied().unwrap_or(0),
            EncoderKind::PretrainedDeep => 256,
        }
    }

    pub fn stride(&self) -> usize {
        ENCODER_STRIDE
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == EncoderKind::SmallRandom {
            if self.widths.len() != 4 || self.widths.contains(&0) {
                return Err(Error::InvalidArgument(format!(
                    "small-random encoder needs four nonzero widths, got {:?}",
                    self.widths
                )));
            }
        }
        if self.output_channels() < 8 {
            return Err(Error::InvalidArgument(format!(
                "encoder output channels {} < 8",
                self.output_channels()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    down: Option<Conv2d>,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv { conv: Conv2d, relu: bool },
    MaxPool,
    Basic(BasicBlock),
}

enum LayerCache<T> {
    Conv {
        cache: ConvCache<T>,
        out: Option<Array3<T>>,
    },
    MaxPool {
        argmax: Vec<usize>,
        in_dim: (usize, usize, usize),
    },
    Basic {
        c1: ConvCache<T>,
        h1: Array3<T>,
        c2: ConvCache<T>,
        cd: Option<ConvCache<T>>,
        out: Array3<T>,
    },
}

/// Activations saved by [`Encoder::forward`].
pub struct EncoderCache<T> {
    layers: Vec<LayerCache<T>>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    layers: Vec<Layer>,
}

const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

impl Encoder {
    /// Registers the encoder parameters under `prefix` and initializes them.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let layers = match config.kind {
            EncoderKind::SmallRandom => {
                let mut layers = Vec::new();
                let mut cin = 3;
                for (i, &w) in config.widths.iter().enumerate() {
                    let conv = Conv2d::new(store, &format!("{prefix}.block{i}"), cin, w, 3, 2, 1, true, rng);
                    layers.push(Layer::Conv {
                        conv,
                        relu: i + 1 < config.widths.len(),
                    });
                    cin = w;
                }
                layers
            }
            EncoderKind::PretrainedDeep => {
                let mut layers = vec![
                    Layer::Conv {
                        conv: Conv2d::new(store, &format!("{prefix}.conv1"), 3, 64, 7, 2, 3, true, rng),
                        relu: true,
                    },
                    Layer::MaxPool,
                ];
                let mut cin = 64;
                for (stage, width) in [(1, 64), (2, 128), (3, 256)] {
                    for b in 0..2 {
                        let stride = if stage > 1 && b == 0 { 2 } else { 1 };
                        let name = format!("{prefix}.layer{stage}.{b}");
                        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), cin, width, 3, stride, 1, true, rng);
                        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), width, width, 3, 1, 1, true, rng);
                        let down = (stride != 1 || cin != width).then(|| {
                            Conv2d::new(store, &format!("{name}.downsample"), cin, width, 1, stride, 0, true, rng)
                        });
                        layers.push(Layer::Basic(BasicBlock { conv1, conv2, down }));
                        cin = width;
                    }
                }
                // Only the last residual block is fine-tuned.
                let n = layers.len();
                for layer in &layers[..n - 1] {
                    for id in layer_params(layer) {
                        store.set_trainable(id, false);
                    }
                }
                layers
            }
        };
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Converts an image to the encoder's input tensor.
    pub fn input_tensor<T: Real>(&self, img: &Image) -> Array3<T> {
        let (h, w) = (img.height(), img.width());
        let normalize = self.config.kind == EncoderKind::PretrainedDeep;
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for &v in img.channel(c) {
                let v = if normalize {
                    (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c]
                } else {
                    v
                };
                data.push(T::of(v as f64));
            }
        }
        Array3::from_shape_vec((3, h, w), data).expect("planar image layout")
    }

    pub fn infer<T: Real>(&self, store: &ParamStore<T>, x: Array3<T>) -> Array3<T> {
        let mut x = x;
        for layer in &self.layers {
            x = match layer {
                Layer::Conv { conv, relu } => {
                    let mut y = conv.infer(store, &x);
                    if *relu {
                        relu_inplace(&mut y);
                    }
                    y
                }
                Layer::MaxPool => max_pool_3x3_s2(&x).0,
                Layer::Basic(b) => {
                    let mut h1 = b.conv1.infer(store, &x);
                    relu_inplace(&mut h1);
                    let mut y = b.conv2.infer(store, &h1);
                    match &b.down {
                        Some(d) => y += &d.infer(store, &x),
                        None => y += &x,
                    }
                    relu_inplace(&mut y);
                    y
                }
            };
        }
        x
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: Array3<T>) -> (Array3<T>, EncoderCache<T>) {
        let mut x = x;
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = match layer {
                Layer::Conv { conv, relu } => {
                    let (mut y, cache) = conv.forward(store, &x);
                    let out = if *relu {
                        relu_inplace(&mut y);
                        Some(y.clone())
                    } else {
                        None
                    };
                    (y, LayerCache::Conv { cache, out })
                }
                Layer::MaxPool => {
                    let (y, argmax) = max_pool_3x3_s2(&x);
                    (
                        y,
                        LayerCache::MaxPool {
                            argmax,
                            in_dim: x.dim(),
                        },
                    )
                }
                Layer::Basic(b) => {
                    let (mut h1, c1) = b.conv1.forward(store, &x);
                    relu_inplace(&mut h1);
                    let (mut y, c2) = b.conv2.forward(store, &h1);
                    let cd = match &b.down {
                        Some(d) => {
                            let (s, cd) = d.forward(store, &x);
                            y += &s;
                            Some(cd)
                        }
                        None => {
                            y += &x;
                            None
                        }
                    };
                    relu_inplace(&mut y);
                    let out = y.clone();
                    (y, LayerCache::Basic { c1, h1, c2, cd, out })
                }
            };
            caches.push(cache);
            x = y;
        }
        (x, EncoderCache { layers: caches })
    }

    /// Accumulates parameter gradients. Backpropagation stops at the first
    /// layer holding trainable parameters since the input is not learned.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &EncoderCache<T>,
        dy: Array3<T>,
        grads: &mut Gradients<T>,
    ) {
        let Some(first) = self
            .layers
            .iter()
            .position(|l| layer_params(l).iter().any(|&id| store.param(id).trainable))
        else {
            return;
        };
        let mut dy = dy;
        for idx in (first..self.layers.len()).rev() {
            let need_dx = idx > first;
            let dx = match (&self.layers[idx], &cache.layers[idx]) {
                (Layer::Conv { conv, .. }, LayerCache::Conv { cache, out }) => {
                    let d = match out {
                        Some(o) => relu_backward(o, &dy),
                        None => dy,
                    };
                    conv.backward(store, cache, &d, grads, need_dx)
                }
                (Layer::MaxPool, LayerCache::MaxPool { argmax, in_dim }) => {
                    let mut dx = Array3::zeros(*in_dim);
                    let dxs = dx.as_slice_mut().expect("standard layout");
                    for (&a, &g) in argmax.iter().zip(dy.iter()) {
                        dxs[a] += g;
                    }
                    Some(dx)
                }
                (Layer::Basic(b), LayerCache::Basic { c1, h1, c2, cd, out }) => {
                    let d = relu_backward(out, &dy);
                    let dh1 = b.conv2.backward(store, c2, &d, grads, true).expect("dx requested");
                    let dh1 = relu_backward(h1, &dh1);
                    let dx1 = b.conv1.backward(store, c1, &dh1, grads, need_dx);
                    let dskip = match (&b.down, cd) {
                        (Some(dn), Some(cd)) => dn.backward(store, cd, &d, grads, need_dx),
                        _ => need_dx.then(|| d.clone()),
                    };
                    match (dx1, dskip) {
                        (Some(a), Some(b)) => Some(a + b),
                        _ => None,
                    }
                }
                _ => unreachable!("cache layout follows layer layout"),
            };
            match dx {
                Some(d) => dy = d,
                None => break,
            }
        }
    }

    /// Loads torchvision ResNet-18 weights (stored as safetensors with the
    /// torchvision key names) into a `pretrained-deep` encoder, folding each
    /// batch norm into the preceding convolution.
    pub fn load_torchvision_resnet18<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        prefix: &str,
        bytes: &[u8],
    ) -> Result<()> {
        if self.config.kind != EncoderKind::PretrainedDeep {
            return Err(Error::Checkpoint("torchvision weights need a pretrained-deep encoder".into()));
        }
        let st = safetensors::SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let read = |name: &str| -> Result<Vec<f64>> {
            let t = st
                .tensor(name)
                .map_err(|_| Error::Checkpoint(format!("missing tensor {name}")))?;
            crate::checkpoint::tensor_to_f64(&t)
        };
        let mut fold = |conv: &Conv2d, ours: &str, theirs: &str, bn: &str| -> Result<()> {
            let w = read(&format!("{theirs}.weight"))?;
            let gamma = read(&format!("{bn}.weight"))?;
            let beta = read(&format!("{bn}.bias"))?;
            let mean = read(&format!("{bn}.running_mean"))?;
            let var = read(&format!("{bn}.running_var"))?;
            let per_out = conv.in_channels * conv.kernel * conv.kernel;
            if w.len() != per_out * conv.out_channels || gamma.len() != conv.out_channels {
                return Err(Error::Checkpoint(format!("shape mismatch for {theirs}")));
            }
            let wd = store.get_mut(conv.weight);
            let mut bias = vec![T::zero(); conv.out_channels];
            for o in 0..conv.out_channels {
                let scale = gamma[o] / (var[o] + 1e-5).sqrt();
                for i in 0..per_out {
                    wd[o * per_out + i] = T::of(w[o * per_out + i] * scale);
                }
                bias[o] = T::of(beta[o] - mean[o] * scale);
            }
            let bid = conv.bias.ok_or_else(|| Error::Checkpoint(format!("{ours} has no bias")))?;
            store.get_mut(bid).copy_from_slice(&bias);
            Ok(())
        };
        let mut block_idx = 0;
        for layer in &self.layers {
            match layer {
                Layer::Conv { conv, .. } => fold(conv, &format!("{prefix}.conv1"), "conv1", "bn1")?,
                Layer::MaxPool => {}
                Layer::Basic(b) => {
                    let (stage, blk) = (block_idx / 2 + 1, block_idx % 2);
                    let tv = format!("layer{stage}.{blk}");
                    let ours = format!("{prefix}.{tv}");
                    fold(&b.conv1, &ours, &format!("{tv}.conv1"), &format!("{tv}.bn1"))?;
                    fold(&b.conv2, &ours, &format!("{tv}.conv2"), &format!("{tv}.bn2"))?;
                    if let Some(d) = &b.down {
                        fold(d, &ours, &format!("{tv}.downsample.0"), &format!("{tv}.downsample.1"))?;
                    }
                    block_idx += 1;
                }
            }
        }
        Ok(())
    }
}

fn layer_params(layer: &Layer) -> Vec<scalenet_core::nn::ParamId> {
    let conv_ids = |c: &Conv2d| std::iter::once(c.weight).chain(c.bias).collect::<Vec<_>>();
    match layer {
        Layer::Conv { conv, .. } => conv_ids(conv),
        Layer::MaxPool => Vec::new(),
        Layer::Basic(b) => {
            let mut ids = conv_ids(&b.conv1);
            ids.extend(conv_ids(&b.conv2));
            if let Some(d) = &b.down {
                ids.extend(conv_ids(d));
            }
            ids
        }
    }
}

/// 3x3 max pooling, stride 2, padding 1. Returns flat argmax indices into `x`.
fn max_pool_3x3_s2<T: Real>(x: &Array3<T>) -> (Array3<T>, Vec<usize>) {
    let (c, h, w) = x.dim();
    let (oh, ow) = ((h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1);
    let xs = x.as_slice().expect("standard layout");
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut arg = 0;
                for ky in 0..3 {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = (ci * h + iy as usize) * w + ix as usize;
                        if xs[idx] > best {
                            best = xs[idx];
                            arg = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(arg);
            }
        }
    }
    (Array3::from_shape_vec((c, oh, ow), out).unwrap(), argmax)
}
