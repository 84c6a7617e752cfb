use super::checkpoint::{Archive, FORMAT, VERSION};
use super::cvarm::{apply_covisibility, compute_correlation_map, correlation_backward, AttentionForward, AttentionParams, CorrelationMap};
use super::encoder::{Encoder, EncoderConfig};
use super::msfef::{DenseFeatureMap, FusionCache, Msfef};
use super::regressor::{Regressor, RegressorCache};
use scalenet_core::error::{Error, Result};
use scalenet_core::image::{Image, Rounding};
use scalenet_core::nn::{Gradients, ParamStore, Real};
use scalenet_core::ratio::ScaleRatio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::borrow::Cow;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleNetConfig {
    pub encoder: EncoderConfig,
    /// Side of the square network input; images are letterboxed to it.
    pub resolution: usize,
    pub regressor_width: usize,
    /// Covisibility attention on; when off both masks are fixed to 1.
    pub cvarm: bool,
    pub rounding: Rounding,
}

impl Default for ScaleNetConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            resolution: 160,
            regressor_width: 64,
            cvarm: true,
            rounding: Rounding::HalfUp,
        }
    }
}

impl ScaleNetConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        // The downsampled pyramid level must still be a multiple of the stride.
        let unit = 2 * self.encoder.stride();
        if self.resolution < 64 || self.resolution % unit != 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution {} must be a multiple of {unit} and at least 64",
                self.resolution
            )));
        }
        if self.regressor_width < 2 {
            return Err(Error::InvalidArgument("regressor width must be at least 2".into()));
        }
        Ok(())
    }

    /// Side of the feature grid of the original pyramid level.
    pub fn grid_side(&self) -> usize {
        self.resolution / self.encoder.stride()
    }
}

/// The scale-ratio network. Immutable during inference and safe to share
/// between threads; training mutates [`ScaleNet::store_mut`].
#[derive(Debug, Clone)]
pub struct ScaleNet<T> {
    config: ScaleNetConfig,
    store: ParamStore<T>,
    pub msfef: Msfef,
    pub attention: AttentionParams,
    pub regressor: Regressor,
}

/// Saved state of one head evaluation `(f1, f2) -> r`.
pub struct HeadCache<T> {
    corr: CorrelationMap<T>,
    attention: Option<AttentionForward<T>>,
    regressor: RegressorCache<T>,
}

/// Both orderings of a training pair evaluated with shared feature passes.
pub struct PairForward<T> {
    /// Raw `log2` prediction for `(a, b)`.
    pub r_ab: T,
    /// Raw `log2` prediction for `(b, a)`.
    pub r_ba: T,
    /// `log2(a1 / a2)` of the letterbox factors; add to `r_ab` for the original images.
    pub letterbox_log2: f64,
    f1: DenseFeatureMap<T>,
    f2: DenseFeatureMap<T>,
    c1: FusionCache<T>,
    c2: FusionCache<T>,
    ab: HeadCache<T>,
    ba: HeadCache<T>,
}

impl<T: Real> ScaleNet<T> {
    pub fn new(config: ScaleNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, "encoder", &config.encoder, &mut rng)?;
        let msfef = Msfef::new(&mut store, "fusion", encoder, config.rounding);
        let attention = AttentionParams::new(&mut store, "attention", &mut rng);
        let g = config.grid_side();
        let regressor = Regressor::new(&mut store, "regressor", g * g, config.regressor_width, &mut rng);
        let mut net = Self {
            config,
            store,
            msfef,
            attention,
            regressor,
        };
        net.sync_attention_trainable();
        Ok(net)
    }

    fn sync_attention_trainable(&mut self) {
        let on = self.config.cvarm;
        for conv in [&self.attention.cab1, &self.attention.cab2] {
            for id in std::iter::once(conv.weight).chain(conv.bias) {
                self.store.set_trainable(id, on);
            }
        }
    }

    /// Initializes a `pretrained-deep` encoder from torchvision ResNet-18
    /// weights stored as safetensors.
    pub fn load_encoder_weights(&mut self, safetensors_bytes: &[u8]) -> Result<()> {
        let encoder = self.msfef.encoder.clone();
        encoder.load_torchvision_resnet18(&mut self.store, "encoder", safetensors_bytes)
    }

    pub fn config(&self) -> &ScaleNetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Switches covisibility attention on or off (off fixes both masks to 1).
    pub fn set_cvarm(&mut self, on: bool) {
        self.config.cvarm = on;
        self.sync_attention_trainable();
    }

    /// Letterboxes `img` to the network resolution; returns the image and the
    /// applied resize factor.
    pub fn prepare<'a>(&self, img: &'a Image) -> Result<(Cow<'a, Image>, f64)> {
        let r = self.config.resolution;
        if img.height() == r && img.width() == r {
            return Ok((Cow::Borrowed(img), 1.0));
        }
        let (lb, f) = img.letterbox(r)?;
        Ok((Cow::Owned(lb), f))
    }

    /// Fused features of an image already at network resolution.
    pub fn features(&self, img: &Image) -> Result<DenseFeatureMap<T>> {
        self.check_resolution(img)?;
        self.msfef.extract(&self.store, img)
    }

    fn check_resolution(&self, img: &Image) -> Result<()> {
        let r = self.config.resolution;
        if img.height() != r || img.width() != r {
            return Err(Error::ShapeMismatch(format!(
                "network input must be {r}x{r}, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    /// Raw (unclamped) `log2` ratio predicted from two feature maps.
    pub fn head(&self, f1: &DenseFeatureMap<T>, f2: &DenseFeatureMap<T>) -> Result<T> {
        Ok(self.head_forward(f1, f2)?.0)
    }

    pub fn head_forward(&self, f1: &DenseFeatureMap<T>, f2: &DenseFeatureMap<T>) -> Result<(T, HeadCache<T>)> {
        let corr = compute_correlation_map(f1, f2)?;
        let (attention, masked) = if self.config.cvarm {
            let att = AttentionForward::run(&corr, &self.attention, &self.store);
            let masked = apply_covisibility(&corr, &att.m1, &att.m2)?;
            (Some(att), Cow::Owned(masked))
        } else {
            (None, Cow::Borrowed(&corr))
        };
        let (r, regressor) = self.regressor.forward(&self.store, &masked)?;
        drop(masked);
        Ok((
            r,
            HeadCache {
                corr,
                attention,
                regressor,
            },
        ))
    }

    /// Accumulates head parameter gradients for `dr = dL/dr`; returns the
    /// gradients with respect to both `(c, h, w)` feature maps.
    pub fn head_backward(
        &self,
        f1: &DenseFeatureMap<T>,
        f2: &DenseFeatureMap<T>,
        cache: &HeadCache<T>,
        dr: T,
        grads: &mut Gradients<T>,
    ) -> (ndarray::Array3<T>, ndarray::Array3<T>) {
        let d_masked = self.regressor.backward(&self.store, &cache.regressor, dr, grads);
        let d_corr = match &cache.attention {
            Some(att) => att.backward(&cache.corr, &self.attention, &self.store, &d_masked, grads),
            None => d_masked,
        };
        correlation_backward(f1, f2, &d_corr)
    }

    /// Estimates `s` with `phi(i1, i2) = s`, clamped to `[2^-9, 2^9]`.
    pub fn estimate(&self, i1: &Image, i2: &Image) -> Result<ScaleRatio> {
        Ok(self.estimate_both(i1, i2)?.0)
    }

    /// Estimates for `(i1, i2)` and `(i2, i1)` sharing one feature pass per image.
    pub fn estimate_both(&self, i1: &Image, i2: &Image) -> Result<(ScaleRatio, ScaleRatio)> {
        let (p1, a1) = self.prepare(i1)?;
        let (p2, a2) = self.prepare(i2)?;
        let f1 = self.features(&p1)?;
        let f2 = self.features(&p2)?;
        let correction = (a1 / a2).log2();
        let r12 = self.head(&f1, &f2)?.f64() + correction;
        let r21 = self.head(&f2, &f1)?.f64() - correction;
        Ok((ScaleRatio::from_log2_clamped(r12)?, ScaleRatio::from_log2_clamped(r21)?))
    }

    pub fn forward_pair(&self, a: &Image, b: &Image) -> Result<PairForward<T>> {
        let (pa, fa) = self.prepare(a)?;
        let (pb, fb) = self.prepare(b)?;
        let (f1, c1) = self.msfef.forward(&self.store, &pa)?;
        let (f2, c2) = self.msfef.forward(&self.store, &pb)?;
        let (r_ab, ab) = self.head_forward(&f1, &f2)?;
        let (r_ba, ba) = self.head_forward(&f2, &f1)?;
        Ok(PairForward {
            r_ab,
            r_ba,
            letterbox_log2: (fa / fb).log2(),
            f1,
            f2,
            c1,
            c2,
            ab,
            ba,
        })
    }

    /// Backpropagates `dL/dr_ab` and `dL/dr_ba` through the whole network.
    pub fn backward_pair(&self, fwd: PairForward<T>, d_ab: T, d_ba: T, grads: &mut Gradients<T>) {
        let (mut d1, mut d2) = self.head_backward(&fwd.f1, &fwd.f2, &fwd.ab, d_ab, grads);
        let (e2, e1) = self.head_backward(&fwd.f2, &fwd.f1, &fwd.ba, d_ba, grads);
        d1 += &e1;
        d2 += &e2;
        self.msfef.backward(&self.store, fwd.c1, &d1, grads);
        self.msfef.backward(&self.store, fwd.c2, &d2, grads);
    }

    /// Same network with parameters converted to another element type.
    pub fn cast<U: Real>(&self) -> ScaleNet<U> {
        ScaleNet {
            config: self.config.clone(),
            store: self.store.cast(),
            msfef: self.msfef.clone(),
            attention: self.attention.clone(),
            regressor: self.regressor.clone(),
        }
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::default();
        a.metadata.insert("format".into(), FORMAT.into());
        a.metadata.insert("version".into(), VERSION.into());
        a.metadata.insert(
            "config".into(),
            serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
        for (_, p) in self.store.iter() {
            a.tensors.insert(
                p.name.clone(),
                (p.shape.clone(), p.data.iter().map(|v| v.f64() as f32).collect()),
            );
        }
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.require_meta("format")? != FORMAT {
            return Err(Error::Checkpoint("not a scalenet checkpoint".into()));
        }
        let version = a.require_meta("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config: ScaleNetConfig =
            serde_json::from_str(a.require_meta("config")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut net = Self::new(config, 0)?;
        let ids: Vec<_> = net.store.ids().collect();
        for id in ids {
            let p = net.store.param(id);
            let (shape, data) = a
                .tensors
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if shape != &p.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {shape:?}, expected {:?}",
                    p.name, p.shape
                )));
            }
            let values: Vec<T> = data.iter().map(|&v| T::of(v as f64)).collect();
            net.store.get_mut(id).copy_from_slice(&values);
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

/// Scale ratio `s = phi(i1, i2)` predicted by `model`.
pub fn estimate_scale_ratio<T: Real>(i1: &Image, i2: &Image, model: &ScaleNet<T>) -> Result<ScaleRatio> {
    model.estimate(i1, i2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScaleNetConfig {
        ScaleNetConfig {
            encoder: EncoderConfig::small_random(vec![4, 8, 8, 8]),
            resolution: 64,
            regressor_width: 8,
            ..Default::default()
        }
    }

    fn noise(h: usize, w: usize, seed: u32) -> Image {
        Image::from_fn(h, w, |y, x| {
            let v = ((x as u32).wrapping_mul(2654435761) ^ (y as u32).wrapping_mul(40503) ^ seed.wrapping_mul(97)) % 255;
            let v = v as f32 / 255.0;
            [v, (v * 3.0) % 1.0, 1.0 - v]
        })
    }

    #[test]
    fn zero_head_model_estimates_one() {
        let net = ScaleNet::<f32>::new(small(), 0).unwrap();
        let s = net.estimate(&noise(64, 64, 1), &noise(64, 64, 2)).unwrap();
        assert_eq!(s.value(), 1.0);
        // Letterboxing equal-shaped inputs does not shift the estimate.
        let s = net.estimate(&noise(100, 50, 1), &noise(100, 50, 2)).unwrap();
        assert_eq!(s.value(), 1.0);
    }

    #[test]
    fn letterbox_correction_accounts_for_input_size() {
        let net = ScaleNet::<f32>::new(small(), 0).unwrap();
        // Same content at two sizes: the letterboxed copies are identical, so the
        // network sees no difference and the estimate is the size ratio.
        let img = noise(128, 128, 3);
        let half = img.resize(64, 64).unwrap();
        let s = net.estimate(&half, &img).unwrap();
        assert!((s.value() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let mut net = ScaleNet::<f32>::new(small(), 7).unwrap();
        let bias = net.regressor.fc2.bias;
        net.store_mut().get_mut(bias)[0] = 0.75;
        net.save(&path).unwrap();
        let back = ScaleNet::<f32>::load(&path).unwrap();
        assert_eq!(back.store(), net.store());
        assert_eq!(back.config(), net.config());
        let (a, b) = (noise(64, 64, 4), noise(64, 64, 5));
        assert_eq!(net.estimate(&a, &b).unwrap(), back.estimate(&a, &b).unwrap());
    }

    #[test]
    fn rejects_bad_resolution() {
        let mut c = small();
        c.resolution = 80;
        assert!(ScaleNet::<f32>::new(c, 0).is_err());
    }

    #[test]
    fn pair_gradients_match_finite_differences() {
        let mut net = ScaleNet::<f64>::new(small(), 11).unwrap();
        let fc2 = net.regressor.fc2.weight;
        for (i, v) in net.store_mut().get_mut(fc2).iter_mut().enumerate() {
            *v = 0.3 - 0.1 * i as f64;
        }
        let (a, b) = (noise(64, 64, 6), noise(64, 64, 8));
        let objective = |n: &ScaleNet<f64>| {
            let f = n.forward_pair(&a, &b).unwrap();
            0.7 * f.r_ab - 1.3 * f.r_ba
        };
        let fwd = net.forward_pair(&a, &b).unwrap();
        let mut grads = Gradients::zeros_like(net.store());
        net.backward_pair(fwd, 0.7, -1.3, &mut grads);
        let ids: Vec<_> = net.store().ids().collect();
        for id in ids {
            let len = net.store().get(id).len();
            for k in (0..len).step_by((len / 3).max(1)) {
                let mut plus = net.clone();
                plus.store_mut().get_mut(id)[k] += 1e-6;
                let mut minus = net.clone();
                minus.store_mut().get_mut(id)[k] -= 1e-6;
                let fd = (objective(&plus) - objective(&minus)) / 2e-6;
                let an = grads.get(id)[k];
                let name = &net.store().param(id).name;
                assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "{name}[{k}] fd {fd} an {an}");
            }
        }
    }
}
