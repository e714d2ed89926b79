//! Cached complex FFT plans keyed by length.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

type PlanPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn plans(len: usize) -> PlanPair {
    static CACHE: OnceLock<RwLock<HashMap<usize, PlanPair>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(p) = cache.read().expect("fft cache poisoned").get(&len) {
        return p.clone();
    }
    let mut w = cache.write().expect("fft cache poisoned");
    w.entry(len)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
        })
        .clone()
}

pub(crate) fn forward_real(x: &[f64]) -> Vec<Complex64> {
    let (fwd, _) = plans(x.len());
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    buf
}

/// Inverse transform, normalized by `1/len`, keeping the real part.
pub(crate) fn inverse_real(spec: &[Complex64]) -> Vec<f64> {
    let (_, inv) = plans(spec.len());
    let mut buf = spec.to_vec();
    inv.process(&mut buf);
    let n = spec.len() as f64;
    buf.into_iter().map(|c| c.re / n).collect()
}

/// Absolute frequency (Hz) of each FFT bin.
pub(crate) fn bin_frequencies(len: usize, sample_rate: f64) -> Vec<f64> {
    (0..len)
        .map(|k| k.min(len - k) as f64 * sample_rate / len as f64)
        .collect()
}
