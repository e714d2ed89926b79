//! Neural–visual alignment toolkit: attention-guided dual-path image
//! blurring, learnable EEG frequency-band screening, boundary-calibrated
//! contrastive alignment and a zero-shot retrieval harness, all with
//! hand-derived gradients certified by a finite-difference oracle.

pub mod align;
pub mod blur;
pub mod checks;
pub mod cli;
pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod pipeline;
pub mod resample;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
