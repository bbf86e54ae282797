//! Diversity measures between trained models: Fréchet distance between
//! their pooled feature distributions and DTW distances between their
//! final-layer filters, with a 2-D embedding of the latter.

mod dtw;
mod embed;
mod fid;
mod filters;

pub use dtw::dtw;
pub use embed::{classical_mds, embed_2d, Embedding};
pub use fid::{feature_statistics, fid, stats_from_vectors, FeaturePooling, FeatureStats, FidResult};
pub use filters::{filter_distance_matrix, FilterDistanceMatrix, FilterLabel};

/// Sum of `terms` in ascending order; the result depends only on the
/// multiset of values.
pub(crate) fn ordered_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}
