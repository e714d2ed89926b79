//! Frequency-band screening of EEG trials: a partition-of-unity FFT filter
//! bank with learnable edge scales, temperature-softmax band selection with
//! an entropy regularizer, and static band-pass baselines.

mod bank;
mod bandpass;
mod select;
mod trial;

pub use bank::{
    decompose_bands, gamma_from_raw, raw_from_gamma, smooth_step, BandScreen, BandSpec,
    ScreenTrace, SubBandSet, CANONICAL_BAND_NAMES,
};
pub use bandpass::{static_bandpass, BandPreset};
pub use select::{
    entropy_grad_logits, fuse_bands, selection_entropy, selection_weights, softmax_backward,
    SelectionWeights,
};
pub use trial::EEGTrial;

pub(crate) mod fft;
