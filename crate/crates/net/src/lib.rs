//! The scale-ratio network: fused multi-scale features, covisibility-weighted
//! correlation and a regression head predicting `log2 s`.

pub mod checkpoint;
pub mod cvarm;
pub mod encoder;
mod model;
pub mod msfef;
pub mod regressor;

pub use cvarm::{
    apply_covisibility, channel_max, compute_correlation_map, covisibility_masks, spatial_max, AttentionParams,
    CorrelationMap, CovisibilityMask,
};
pub use encoder::{EncoderConfig, EncoderKind};
pub use model::{estimate_scale_ratio, HeadCache, PairForward, ScaleNet, ScaleNetConfig};
pub use msfef::{DenseFeatureMap, Msfef};
pub use regressor::{regress_scale_ratio, Regressor};

use scalenet_core::error::Result;
use scalenet_core::image::Image;
use scalenet_core::nn::{ParamStore, Real};

/// Fused, unit-normalized features of `img` under the given fusion module.
pub fn extract_fused_features<T: Real>(img: &Image, msfef: &Msfef, store: &ParamStore<T>) -> Result<DenseFeatureMap<T>> {
    msfef.extract(store, img)
}
