//! Shared foundation: errors, images, scale ratios and tensor building blocks.

pub mod error;
pub mod image;
pub mod nn;
pub mod ratio;

pub use error::{Error, Result};
pub use image::Image;
pub use ratio::ScaleRatio;
