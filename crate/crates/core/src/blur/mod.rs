//! Gaussian blur, contrast saliency, and the two spatially varying blur
//! paths: saliency-guided (`X_A`) and center-biased radial (`X_B`).

mod gaussian;
mod image;
mod paths;
mod saliency;

pub use gaussian::{gaussian_blur, gaussian_kernel, GaussianBlur};
pub use image::{ImageTensor, WeightMap};
pub use paths::{blend_backward, center_blur, center_weight_map, saliency_blur, BlurConfig};
pub use saliency::{compute_saliency, DEFAULT_SALIENCY_SCALES};
