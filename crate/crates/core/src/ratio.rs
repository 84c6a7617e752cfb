//! Scale ratios, stored canonically as base-2 logarithms.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Inference clamp on `log2` of a predicted ratio. Covers the `[2^-9, 2^9]`
/// range of annotated pairs.
pub const LOG2_CLAMP: f64 = 9.0;

/// A strictly positive scale ratio `s = φ(I1, I2)`: resizing `I1` by `s`
/// equalizes the pixel area of the visual overlap in both images.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ScaleRatio {
    log2: f64,
}

impl ScaleRatio {
    pub const ONE: ScaleRatio = ScaleRatio { log2: 0.0 };

    pub fn from_value(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidRatio(value));
        }
        Ok(Self {
            log2: value.log2(),
        })
    }

    pub fn from_log2(log2: f64) -> Result<Self> {
        if !log2.is_finite() {
            return Err(Error::InvalidRatio(log2.exp2()));
        }
        Ok(Self { log2 })
    }

    /// Builds a ratio from a raw regressor output, applying the inference clamp.
    pub fn from_log2_clamped(log2: f64) -> Result<Self> {
        Self::from_log2(log2).map(|r| r.clamped())
    }

    pub fn value(self) -> f64 {
        self.log2.exp2()
    }

    pub fn log2(self) -> f64 {
        self.log2
    }

    /// The ratio of the swapped pair, `φ(I2, I1) = 1 / φ(I1, I2)`.
    pub fn inverse(self) -> Self {
        Self { log2: -self.log2 }
    }

    pub fn clamped(self) -> Self {
        Self {
            log2: self.log2.clamp(-LOG2_CLAMP, LOG2_CLAMP),
        }
    }
}

impl Default for ScaleRatio {
    fn default() -> Self {
        Self::ONE
    }
}

impl TryFrom<f64> for ScaleRatio {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::from_value(value)
    }
}

impl From<ScaleRatio> for f64 {
    fn from(r: ScaleRatio) -> f64 {
        r.value()
    }
}

impl std::fmt::Display for ScaleRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive() {
        assert!(ScaleRatio::from_value(0.0).is_err());
        assert!(ScaleRatio::from_value(-2.0).is_err());
        assert!(ScaleRatio::from_value(f64::NAN).is_err());
        assert!(ScaleRatio::from_log2(f64::INFINITY).is_err());
    }

    #[test]
    fn clamp_bounds() {
        let r = ScaleRatio::from_log2_clamped(12.0).unwrap();
        assert_eq!(r.log2(), 9.0);
        let r = ScaleRatio::from_log2_clamped(-30.0).unwrap();
        assert_eq!(r.value(), 2f64.powi(-9));
    }

    #[test]
    fn inverse_roundtrip() {
        let r = ScaleRatio::from_value(8.0).unwrap();
        assert_eq!(r.log2(), 3.0);
        assert_eq!(r.inverse().value(), 0.125);
    }
}
