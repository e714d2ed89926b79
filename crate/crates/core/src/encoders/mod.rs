//! EEG encoder (trainable) and frozen visual encoder. Both emit unit-norm
//! embeddings of the same dimension.

mod eeg;
mod visual;

pub use eeg::{EegEncoder, EegEncoderConfig, EegGrads, EegTrace, EEG_KERNEL, EEG_MIXER, EEG_PROJECTION};
pub use visual::{FrozenVisualEncoder, VisualTrace, VISUAL_GRID};

/// Unit-norm embedding vector.
pub type Embedding = Vec<f64>;
