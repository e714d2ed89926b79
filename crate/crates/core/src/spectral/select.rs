use super::{EEGTrial, SubBandSet};
use crate::error::{Error, Result};

/// Band-selection logits with their temperature and softmax probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionWeights {
    pub logits: Vec<f64>,
    pub tau: f64,
    pub probs: Vec<f64>,
}

impl SelectionWeights {
    pub fn new(logits: Vec<f64>, tau: f64) -> Result<Self> {
        let probs = selection_weights(&logits, tau)?;
        Ok(Self { logits, tau, probs })
    }

    pub fn entropy(&self) -> f64 {
        selection_entropy(&self.probs)
    }
}

/// `m_i = exp(w_i/τ) / Σ_j exp(w_j/τ)`, evaluated with the max logit removed.
pub fn selection_weights(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    if logits.is_empty() {
        return Err(Error::InvalidArgument("no logits".into()));
    }
    if logits.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("selection logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|w| ((w - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Natural-log entropy with `0·ln 0 = 0`.
pub fn selection_entropy(m: &[f64]) -> f64 {
    -m.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Pull `∂L/∂m` back through the tempered softmax.
pub fn softmax_backward(m: &[f64], d_m: &[f64], tau: f64) -> Vec<f64> {
    let dot: f64 = m.iter().zip(d_m).map(|(p, g)| p * g).sum();
    m.iter().zip(d_m).map(|(p, g)| p * (g - dot) / tau).collect()
}

/// `∂H/∂w_i = −(m_i/τ)(ln m_i + H)`.
pub fn entropy_grad_logits(m: &[f64], tau: f64) -> Vec<f64> {
    let h = selection_entropy(m);
    m.iter()
        .map(|&p| if p > 0.0 { -(p / tau) * (p.ln() + h) } else { 0.0 })
        .collect()
}

/// `n · Σ_i m_i · band_i`; uniform weights reproduce the input.
pub fn fuse_bands(bands: &SubBandSet, m: &[f64]) -> Result<EEGTrial> {
    if m.len() != bands.n_bands() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} bands",
            m.len(),
            bands.n_bands()
        )));
    }
    let n = m.len() as f64;
    let mut out = vec![0.0; bands.components[0].data().len()];
    for (comp, &mi) in bands.components.iter().zip(m) {
        for (o, v) in out.iter_mut().zip(comp.data()) {
            *o += n * mi * v;
        }
    }
    bands.components[0].with_data(out)
}
