//! Scale-ratio estimation between two images and scale-aware local feature
//! matching. This crate re-exports the subsystem crates under one roof.

pub use scalenet_core::{error, image, nn, ratio, Error, Image, Result, ScaleRatio};
pub use scalenet_datagen as datagen;
pub use scalenet_eval as eval;
pub use scalenet_net as net;
pub use scalenet_sdaim as sdaim;
pub use scalenet_train as train;
