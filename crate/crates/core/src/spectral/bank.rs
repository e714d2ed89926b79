use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{bin_frequencies, forward_real, inverse_real};
use super::EEGTrial;
use crate::error::{Error, Result};

pub const CANONICAL_BAND_NAMES: [&str; 5] = ["delta", "theta", "alpha", "beta", "gamma"];

/// Band layout: `n + 1` ascending base edges (Hz), one scale `γ_i` per band
/// and the crossfade width `delta` (Hz).
///
/// Band `i`'s lower edge is `base_edges[i] · γ_i`; the top edge is never
/// scaled. The first and last bands extend to DC and Nyquist respectively
/// so the bank always partitions the whole spectrum; only the `n − 1`
/// interior edges shape the masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub base_edges: Vec<f64>,
    pub gamma: Vec<f64>,
    pub gamma_bounds: (f64, f64),
    pub delta: f64,
    pub names: Vec<String>,
}

impl BandSpec {
    /// δ/θ/α/β/γ rhythms: `{0.5, 4, 8, 13, 30, min(100, fs/2)}` Hz, γ ≡ 1.
    pub fn canonical(sample_rate: f64) -> Self {
        Self {
            base_edges: vec![0.5, 4.0, 8.0, 13.0, 30.0, 100f64.min(sample_rate / 2.0)],
            gamma: vec![1.0; 5],
            gamma_bounds: (0.5, 2.0),
            delta: 1.0,
            names: CANONICAL_BAND_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn n_bands(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gamma.len();
        if n < 2 {
            return Err(Error::InvalidArgument("need at least two bands".into()));
        }
        if self.base_edges.len() != n + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} bands need {} edges, got {}",
                n,
                n + 1,
                self.base_edges.len()
            )));
        }
        if !self.names.is_empty() && self.names.len() != n {
            return Err(Error::InvalidArgument("band names must match band count".into()));
        }
        let (lo, hi) = self.gamma_bounds;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::InvalidArgument(format!("bad gamma bounds ({lo}, {hi})")));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidArgument(format!("crossfade width must be > 0, got {}", self.delta)));
        }
        if self.gamma.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidArgument("gamma values must be positive".into()));
        }
        Ok(())
    }

    pub fn band_name(&self, i: usize) -> String {
        self.names.get(i).cloned().unwrap_or_else(|| format!("band{}", i + 1))
    }

    /// Scaled, clamped and clipped edges; errors if they are not strictly
    /// ascending inside `(0, fs/2]`.
    pub fn effective_edges(&self, sample_rate: f64) -> Result<Vec<f64>> {
        self.validate()?;
        let nyquist = sample_rate / 2.0;
        let (lo, hi) = self.gamma_bounds;
        let n = self.n_bands();
        let edges: Vec<f64> = (0..=n)
            .map(|j| {
                let scale = if j < n { self.gamma[j].clamp(lo, hi) } else { 1.0 };
                (self.base_edges[j] * scale).min(nyquist)
            })
            .collect();
        if edges[0] <= 0.0 || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::EdgesCollapse(edges));
        }
        Ok(edges)
    }

    /// `∂e_j/∂γ_j` for each band's lower edge (zero where clamped or clipped).
    fn edge_scale_derivative(&self, sample_rate: f64) -> Vec<f64> {
        let (lo, hi) = self.gamma_bounds;
        self.gamma
            .iter()
            .zip(&self.base_edges)
            .map(|(&g, &base)| {
                let inside = g > lo && g < hi;
                if inside && base * g < sample_rate / 2.0 {
                    base
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Smooth squashing of an unconstrained parameter into `(lo, hi)`.
/// Returns `(γ, dγ/draw)`.
pub fn gamma_from_raw(raw: f64, bounds: (f64, f64)) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-raw).exp());
    let span = bounds.1 - bounds.0;
    (bounds.0 + span * s, span * s * (1.0 - s))
}

pub fn raw_from_gamma(gamma: f64, bounds: (f64, f64)) -> f64 {
    let s = (gamma - bounds.0) / (bounds.1 - bounds.0);
    (s / (1.0 - s)).ln()
}

/// Raised-cosine step from 0 to 1 across `[edge − δ/2, edge + δ/2]`, and
/// its derivative with respect to the frequency.
pub fn smooth_step(freq: f64, edge: f64, delta: f64) -> (f64, f64) {
    let u = freq - edge + delta / 2.0;
    if u <= 0.0 {
        (0.0, 0.0)
    } else if u >= delta {
        (1.0, 0.0)
    } else {
        let phase = PI * u / delta;
        (0.5 - 0.5 * phase.cos(), 0.5 * PI / delta * phase.sin())
    }
}

/// Per-band components of one trial; they sum back to the trial.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBandSet {
    pub components: Vec<EEGTrial>,
    pub spec: BandSpec,
    pub edges: Vec<f64>,
}

impl SubBandSet {
    pub fn n_bands(&self) -> usize {
        self.components.len()
    }

    pub fn sum(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.components[0].data().len()];
        for comp in &self.components {
            for (a, v) in acc.iter_mut().zip(comp.data()) {
                *a += v;
            }
        }
        acc
    }

    pub fn energies(&self) -> Vec<f64> {
        self.components.iter().map(EEGTrial::energy).collect()
    }
}

/// Filter bank bound to a trial length and sampling rate.
#[derive(Debug, Clone)]
pub struct BandScreen {
    spec: BandSpec,
    samples: usize,
    edges: Vec<f64>,
    edge_scale: Vec<f64>,
    /// `masks[i][k]`: membership of FFT bin `k` in band `i`.
    masks: Vec<Vec<f64>>,
    /// `slopes[j][k]`: `∂s/∂f` of the step at interior edge `j` (index 0 unused).
    slopes: Vec<Vec<f64>>,
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ScreenTrace {
    spectra: Vec<Vec<Complex64>>,
    bands: Vec<Vec<f64>>,
}

impl ScreenTrace {
    pub fn band(&self, i: usize) -> &[f64] {
        &self.bands[i]
    }
}

impl BandScreen {
    pub fn new(spec: &BandSpec, samples: usize, sample_rate: f64) -> Result<Self> {
        let edges = spec.effective_edges(sample_rate)?;
        let n = spec.n_bands();
        let freqs = bin_frequencies(samples, sample_rate);
        let steps: Vec<Vec<(f64, f64)>> = (0..n)
            .map(|j| freqs.iter().map(|&f| smooth_step(f, edges[j], spec.delta)).collect())
            .collect();
        let masks = (0..n)
            .map(|i| {
                (0..samples)
                    .map(|k| {
                        let lower = if i == 0 { 1.0 } else { steps[i][k].0 };
                        let upper = if i + 1 == n { 0.0 } else { steps[i + 1][k].0 };
                        lower - upper
                    })
                    .collect()
            })
            .collect();
        let slopes = steps
            .iter()
            .map(|s| s.iter().map(|&(_, d)| d).collect())
            .collect();
        Ok(Self {
            spec: spec.clone(),
            samples,
            edge_scale: spec.edge_scale_derivative(sample_rate),
            edges,
            masks,
            slopes,
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bands(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[Vec<f64>] {
        &self.masks
    }

    fn check(&self, x: &EEGTrial) -> Result<()> {
        if x.samples() != self.samples {
            return Err(Error::DimensionMismatch(format!(
                "filter bank built for {} samples, trial has {}",
                self.samples,
                x.samples()
            )));
        }
        Ok(())
    }

    /// Split every channel into `n` band components.
    pub fn decompose(&self, x: &EEGTrial) -> Result<(SubBandSet, ScreenTrace)> {
        self.check(x)?;
        let (c, t) = (x.channels(), x.samples());
        let spectra: Vec<Vec<Complex64>> = (0..c).map(|ch| forward_real(x.channel(ch))).collect();
        let mut bands = vec![vec![0.0; c * t]; self.n_bands()];
        for (ch, spec) in spectra.iter().enumerate() {
            for (band, mask) in bands.iter_mut().zip(&self.masks) {
                let masked: Vec<Complex64> = spec.iter().zip(mask).map(|(z, &a)| z * a).collect();
                band[ch * t..(ch + 1) * t].copy_from_slice(&inverse_real(&masked));
            }
        }
        let components = bands
            .iter()
            .map(|b| x.with_data(b.clone()))
            .collect::<Result<_>>()?;
        Ok((
            SubBandSet {
                components,
                spec: self.spec.clone(),
                edges: self.edges.clone(),
            },
            ScreenTrace { spectra, bands },
        ))
    }

    /// `y = n · Σ_i m_i · band_i`.
    pub fn forward(&self, x: &EEGTrial, m: &[f64]) -> Result<(EEGTrial, ScreenTrace)> {
        if m.len() != self.n_bands() {
            return Err(Error::DimensionMismatch(format!(
                "{} selection weights for {} bands",
                m.len(),
                self.n_bands()
            )));
        }
        let (_, trace) = self.decompose(x)?;
        let n = self.n_bands() as f64;
        let mut y = vec![0.0; x.data().len()];
        for (band, &mi) in trace.bands.iter().zip(m) {
            for (o, v) in y.iter_mut().zip(band) {
                *o += n * mi * v;
            }
        }
        Ok((x.with_data(y)?, trace))
    }

    /// Gradients of a scalar loss with respect to the selection weights and
    /// the per-band scales `γ`, given `∂L/∂y`.
    pub fn backward(&self, trace: &ScreenTrace, m: &[f64], grad_y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nb = self.n_bands();
        let n = nb as f64;
        let t = self.samples;
        let d_m: Vec<f64> = trace
            .bands
            .iter()
            .map(|b| n * b.iter().zip(grad_y).map(|(u, g)| u * g).sum::<f64>())
            .collect();

        // ⟨g, IFFT(b ⊙ X)⟩ = Σ_k b_k · Re(X_k · conj(G_k)) / T for real even b.
        let mut power = vec![0.0; t];
        for (ch, spec) in trace.spectra.iter().enumerate() {
            let gspec = forward_real(&grad_y[ch * t..(ch + 1) * t]);
            for k in 0..t {
                power[k] += (spec[k] * gspec[k].conj()).re / t as f64;
            }
        }
        let mut d_gamma = vec![0.0; nb];
        for j in 1..nb {
            // band j−1 loses −s(f − e_j), band j gains +s(f − e_j)
            let d_edge: f64 = self.slopes[j].iter().zip(&power).map(|(s, p)| s * p).sum();
            d_gamma[j] = n * (m[j - 1] - m[j]) * d_edge * self.edge_scale[j];
        }
        (d_m, d_gamma)
    }
}

/// Partition-of-unity decomposition of `x` into the bands of `spec`.
pub fn decompose_bands(x: &EEGTrial, spec: &BandSpec) -> Result<SubBandSet> {
    let screen = BandScreen::new(spec, x.samples(), x.sample_rate())?;
    Ok(screen.decompose(x)?.0)
}
