//! Synthetic scale pairs and depth-based ratio annotation.

pub mod annotate;
pub mod corpus;
pub mod dataset;
pub mod kdtree;
pub mod synth;

pub use annotate::{
    annotate_scale_ratio, covisibility_counts, cross_visibility_count, median_spacing, read_depth_table,
    visible_point_cloud, CameraView, DepthSample, PointCloud, Tau,
};
pub use corpus::{DirectoryCorpus, ImageCorpus, ProceduralCorpus, ProceduralKind};
pub use dataset::{
    generate_dataset, generate_pair, read_manifest, write_manifest, GeneratorConfig, ManifestSource, PairRecord,
    SyntheticSource, MANIFEST_FILE,
};
pub use kdtree::KdTree;
pub use synth::{make_pair_downsample, make_pair_upsample, ContentView, Placement, Provenance, SyntheticPair};
