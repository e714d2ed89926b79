use super::SimilarityBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClipLoss {
    pub loss: f64,
    /// `∂loss/∂sim`, row-major `B × B`.
    pub d_sim: Vec<f64>,
    /// `∂loss/∂t`.
    pub d_temperature: f64,
}

fn log_softmax_row(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// Symmetric cross-entropy over rows (EEG→image) and columns (image→EEG)
/// of `sim / t`, with the diagonal as targets, averaged over both
/// directions and the batch.
pub fn clip_contrastive_loss(sim: &SimilarityBatch, temperature: f64) -> Result<ClipLoss> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    let b = sim.size;
    let logits: Vec<f64> = sim.matrix.iter().map(|s| s / temperature).collect();
    let mut d_logits = vec![0.0; b * b];
    let mut loss = 0.0;
    let scale = 0.5 / b as f64;
    for i in 0..b {
        let row = &logits[i * b..(i + 1) * b];
        let lp = log_softmax_row(row);
        loss -= scale * lp[i];
        for j in 0..b {
            d_logits[i * b + j] += scale * (lp[j].exp() - (i == j) as u8 as f64);
        }
    }
    for j in 0..b {
        let col: Vec<f64> = (0..b).map(|i| logits[i * b + j]).collect();
        let lp = log_softmax_row(&col);
        loss -= scale * lp[j];
        for i in 0..b {
            d_logits[i * b + j] += scale * (lp[i].exp() - (i == j) as u8 as f64);
        }
    }
    let d_sim: Vec<f64> = d_logits.iter().map(|g| g / temperature).collect();
    let d_temperature = -d_logits
        .iter()
        .zip(&sim.matrix)
        .map(|(g, s)| g * s)
        .sum::<f64>()
        / (temperature * temperature);
    Ok(ClipLoss {
        loss,
        d_sim,
        d_temperature,
    })
}
