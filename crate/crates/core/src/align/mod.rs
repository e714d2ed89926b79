//! Cross-modal similarity, the symmetric contrastive loss, batch
//! calibration statistics with the boundary hinge loss, and the combined
//! training objective.

mod calibration;
mod contrastive;
mod similarity;

pub use calibration::{batch_stats, boundary_loss, normal_cdf, normal_upper_quantile, BoundaryLoss, CalibrationStats};
pub use contrastive::{clip_contrastive_loss, ClipLoss};
pub use similarity::{cosine_backward, cosine_similarity_matrix, normalize, SimilarityBatch};

/// `clip + w1·bound + w2·entropy`.
pub fn overall_loss(clip: f64, bound: f64, entropy: f64, w1: f64, w2: f64) -> f64 {
    clip + w1 * bound + w2 * entropy
}
