//! k-means codebooks, frame targets and cluster-quality metrics.

mod kmeans;
mod metrics;
mod targets;

pub use kmeans::{assign, kmeans_fit, lloyd, Codebook, KmeansConfig, LloydRun};
pub use metrics::{nmi, purity};
pub use targets::{
    decode_codebook, decode_targets, encode_codebook, encode_targets, load_codebook, load_targets,
    make_targets, save_codebook, save_targets, ClusterTargets, TargetSource,
};
