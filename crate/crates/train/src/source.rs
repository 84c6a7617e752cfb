//! Indexed sources of training pairs.

use scalenet_core::error::{Error, Result};
use scalenet_core::image::Image;
use scalenet_core::ratio::{ScaleRatio, LOG2_CLAMP};

/// A pair with `phi(image1, image2) = gt_ratio`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image1: Image,
    pub image2: Image,
    pub gt_ratio: ScaleRatio,
}

impl TrainSample {
    pub fn new(image1: Image, image2: Image, gt_ratio: ScaleRatio) -> Result<Self> {
        if gt_ratio.log2().abs() > LOG2_CLAMP {
            return Err(Error::InvalidRatio(gt_ratio.value()));
        }
        Ok(Self {
            image1,
            image2,
            gt_ratio,
        })
    }

    /// The same pair seen from the other side: `(image2, image1, 1 / s)`.
    pub fn swapped(&self) -> Self {
        Self {
            image1: self.image2.clone(),
            image2: self.image1.clone(),
            gt_ratio: self.gt_ratio.inverse(),
        }
    }
}

/// Random-access pair storage; samples may be produced lazily.
pub trait PairSource: Sync {
    fn len(&self) -> usize;

    fn sample(&self, index: usize) -> Result<TrainSample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ground truth without materializing images, when cheap.
    fn gt_ratio(&self, index: usize) -> Result<ScaleRatio> {
        Ok(self.sample(index)?.gt_ratio)
    }
}

impl PairSource for Vec<TrainSample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize) -> Result<TrainSample> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("sample {index} out of range")))
    }
}

/// A view of selected indices of another source.
pub struct Subset<'a, S: ?Sized> {
    source: &'a S,
    indices: Vec<usize>,
}

impl<'a, S: PairSource + ?Sized> Subset<'a, S> {
    pub fn new(source: &'a S, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= source.len()) {
            return Err(Error::InvalidArgument(format!("subset index {bad} out of range")));
        }
        Ok(Self { source, indices })
    }

    /// Indices `range` of `source`.
    pub fn range(source: &'a S, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(source, range.collect())
    }
}

impl<S: PairSource + ?Sized> PairSource for Subset<'_, S> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn sample(&self, index: usize) -> Result<TrainSample> {
        let i = *self
            .indices
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("sample {index} out of range")))?;
        self.source.sample(i)
    }

    fn gt_ratio(&self, index: usize) -> Result<ScaleRatio> {
        let i = *self
            .indices
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("sample {index} out of range")))?;
        self.source.gt_ratio(i)
    }
}
