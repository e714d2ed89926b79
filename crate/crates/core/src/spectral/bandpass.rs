use super::bank::smooth_step;
use super::fft::{bin_frequencies, forward_real, inverse_real};
use super::EEGTrial;
use crate::error::{Error, Result};

/// Fixed band-pass baselines: high (> 40 Hz), low (< 8 Hz), mid (8–40 Hz).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandPreset {
    High,
    Low,
    Mid,
}

impl BandPreset {
    pub fn range(self, sample_rate: f64) -> (f64, f64) {
        let nyquist = sample_rate / 2.0;
        match self {
            BandPreset::High => (40.0, nyquist),
            BandPreset::Low => (0.0, 8.0),
            BandPreset::Mid => (8.0, 40.0),
        }
    }
}

/// Keep `[lo, hi]` with raised-cosine transitions of width `delta`. A band
/// touching DC or Nyquist has no transition on that side.
pub fn static_bandpass(x: &EEGTrial, lo: f64, hi: f64, delta: f64) -> Result<EEGTrial> {
    let nyquist = x.sample_rate() / 2.0;
    if !(lo >= 0.0 && lo < hi && hi <= nyquist) {
        return Err(Error::InvalidArgument(format!(
            "band [{lo}, {hi}] must satisfy 0 <= lo < hi <= {nyquist}"
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("crossfade width must be > 0, got {delta}")));
    }
    let t = x.samples();
    let mask: Vec<f64> = bin_frequencies(t, x.sample_rate())
        .into_iter()
        .map(|f| {
            let lower = if lo == 0.0 { 1.0 } else { smooth_step(f, lo, delta).0 };
            let upper = if hi >= nyquist { 0.0 } else { smooth_step(f, hi, delta).0 };
            lower - upper
        })
        .collect();
    let mut out = Vec::with_capacity(x.data().len());
    for ch in 0..x.channels() {
        let spec = forward_real(x.channel(ch));
        let masked: Vec<_> = spec.iter().zip(&mask).map(|(z, &a)| z * a).collect();
        out.extend(inverse_real(&masked));
    }
    x.with_data(out)
}
