//! Scale-difference-aware matching: bring both images to a common scale
//! before extracting local features.

pub mod matcher;
pub mod pipeline;
pub mod sift;

pub use matcher::{mutual_nn_ratio, Match, MatcherAdapter, SiftAdapter};
pub use pipeline::{
    match_baseline, match_with_sdaim, read_match_dump, resize_pair, restore_keypoints, restore_keypoints_axes,
    split_factors, FixedRatio, MatchDump, MatchSet, ResizeOptions, ResizedPair, ScaleEstimator, MAX_RESIZED_SIDE,
};
pub use sift::{detect_and_describe, Keypoint, SiftConfig, DESCRIPTOR_LEN};
