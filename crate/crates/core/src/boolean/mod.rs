//! Boolean latent-factor thresholding and Boolean ensemble clustering.

mod cluster;
mod threshold;

pub use cluster::{boolean_cluster, BooleanClusterResult};
pub use threshold::{
    apply_thresholds, binarize_factors, binarize_rows, boolean_error, kmeans_threshold,
    otsu_threshold, search_thresholds, search_thresholds_masked, Binarized, Binarizer,
    SearchResult, ThresholdOutcome, ThresholdPair, Thresholder,
};
