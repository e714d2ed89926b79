use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Embedding;
use crate::align::normalize;
use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::spectral::EEGTrial;
use crate::tensor::Tensor;

pub const EEG_KERNEL: &str = "eeg.temporal_kernel";
pub const EEG_MIXER: &str = "eeg.channel_mixer";
pub const EEG_PROJECTION: &str = "eeg.projection";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EegEncoderConfig {
    pub channels: usize,
    pub samples: usize,
    pub feature_maps: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub embed_dim: usize,
    /// Smooth GELU between the temporal convolution and the channel mixer.
    pub nonlinearity: bool,
}

impl EegEncoderConfig {
    pub fn new(channels: usize, samples: usize, embed_dim: usize) -> Self {
        Self {
            channels,
            samples,
            feature_maps: 8,
            kernel_size: 9,
            stride: 2,
            embed_dim,
            nonlinearity: true,
        }
    }

    pub fn out_samples(&self) -> usize {
        (self.samples - self.kernel_size) / self.stride + 1
    }

    fn validate(&self) -> Result<()> {
        if self.samples < self.kernel_size || self.stride == 0 || self.feature_maps == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument(format!("invalid EEG encoder config {self:?}")));
        }
        Ok(())
    }
}

const GELU_A: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_B: f64 = 0.044_715;

#[inline]
fn gelu(x: f64) -> (f64, f64) {
    let inner = GELU_A * (x + GELU_B * x * x * x);
    let th = inner.tanh();
    let value = 0.5 * x * (1.0 + th);
    let deriv = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_A * (1.0 + 3.0 * GELU_B * x * x);
    (value, deriv)
}

/// Temporal convolution (shared kernel per feature map, applied to every
/// channel) → GELU → per-map channel mixing → flatten → linear projection
/// → unit normalization.
#[derive(Debug, Clone, Copy)]
pub struct EegEncoder {
    pub config: EegEncoderConfig,
}

#[derive(Debug, Clone)]
pub struct EegTrace {
    /// pre-activation, `F × C × T'`
    pre: Vec<f64>,
    /// activation, `F × C × T'`
    act: Vec<f64>,
    /// mixed maps, `F × T'`
    mixed: Vec<f64>,
    /// unnormalized output and its norm
    raw: Vec<f64>,
    norm: f64,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EegGrads {
    pub kernel: Vec<f64>,
    pub mixer: Vec<f64>,
    pub projection: Vec<f64>,
    /// `∂L/∂x`, `C × T`
    pub input: Vec<f64>,
}

impl EegEncoder {
    pub fn new(config: EegEncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Register the encoder's weights with scaled Gaussian initialization.
    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let c = self.config;
        let flat = c.feature_maps * c.out_samples();
        let mut gauss = |shape: &[usize], fan_in: usize| -> Result<Tensor> {
            let scale = 1.0 / (fan_in as f64).sqrt();
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect())
        };
        let kernel = gauss(&[c.feature_maps, c.kernel_size], c.kernel_size)?;
        let mixer = gauss(&[c.feature_maps, c.channels], c.channels)?;
        let projection = gauss(&[c.embed_dim, flat], flat)?;
        store.insert(EEG_KERNEL, kernel, true)?;
        store.insert(EEG_MIXER, mixer, true)?;
        store.insert(EEG_PROJECTION, projection, true)?;
        Ok(())
    }

    fn check_input(&self, x: &EEGTrial) -> Result<()> {
        if x.channels() != self.config.channels || x.samples() != self.config.samples {
            return Err(Error::DimensionMismatch(format!(
                "encoder expects {}x{}, trial is {}x{}",
                self.config.channels,
                self.config.samples,
                x.channels(),
                x.samples()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: &EEGTrial, store: &ParamStore) -> Result<Embedding> {
        Ok(self.forward(x, store)?.embedding)
    }

    pub fn forward(&self, x: &EEGTrial, store: &ParamStore) -> Result<EegTrace> {
        self.check_input(x)?;
        let cfg = self.config;
        let (nf, nc, k, s) = (cfg.feature_maps, cfg.channels, cfg.kernel_size, cfg.stride);
        let to = cfg.out_samples();
        let kernel = store.value(EEG_KERNEL)?.data();
        let mixer = store.value(EEG_MIXER)?.data();
        let proj = store.value(EEG_PROJECTION)?;

        let mut pre = vec![0.0; nf * nc * to];
        let mut act = vec![0.0; nf * nc * to];
        let mut mixed = vec![0.0; nf * to];
        for f in 0..nf {
            let kf = &kernel[f * k..(f + 1) * k];
            for c in 0..nc {
                let xc = x.channel(c);
                let m = mixer[f * nc + c];
                for t in 0..to {
                    let window = &xc[t * s..t * s + k];
                    let h: f64 = kf.iter().zip(window).map(|(a, b)| a * b).sum();
                    let a = if cfg.nonlinearity { gelu(h).0 } else { h };
                    let idx = (f * nc + c) * to + t;
                    pre[idx] = h;
                    act[idx] = a;
                    mixed[f * to + t] += m * a;
                }
            }
        }
        let flat = nf * to;
        let raw: Vec<f64> = (0..cfg.embed_dim)
            .map(|d| {
                proj.data()[d * flat..(d + 1) * flat]
                    .iter()
                    .zip(&mixed)
                    .map(|(w, u)| w * u)
                    .sum()
            })
            .collect();
        let (embedding, norm) = normalize(&raw, "EEG embedding")?;
        Ok(EegTrace {
            pre,
            act,
            mixed,
            raw,
            norm,
            embedding,
        })
    }

    pub fn backward(&self, x: &EEGTrial, store: &ParamStore, trace: &EegTrace, d_embedding: &[f64]) -> Result<EegGrads> {
        let cfg = self.config;
        let (nf, nc, k, s) = (cfg.feature_maps, cfg.channels, cfg.kernel_size, cfg.stride);
        let to = cfg.out_samples();
        let flat = nf * to;
        let kernel = store.value(EEG_KERNEL)?.data();
        let mixer = store.value(EEG_MIXER)?.data();
        let proj = store.value(EEG_PROJECTION)?.data();

        // through normalization
        let z = &trace.embedding;
        let dot: f64 = d_embedding.iter().zip(z).map(|(a, b)| a * b).sum();
        let d_raw: Vec<f64> = d_embedding
            .iter()
            .zip(z)
            .map(|(g, u)| (g - dot * u) / trace.norm)
            .collect();
        debug_assert_eq!(d_raw.len(), trace.raw.len());

        let mut projection = vec![0.0; cfg.embed_dim * flat];
        let mut d_mixed = vec![0.0; flat];
        for (d, &gd) in d_raw.iter().enumerate() {
            let row = &proj[d * flat..(d + 1) * flat];
            let grow = &mut projection[d * flat..(d + 1) * flat];
            for i in 0..flat {
                grow[i] = gd * trace.mixed[i];
                d_mixed[i] += gd * row[i];
            }
        }

        let mut mixer_g = vec![0.0; nf * nc];
        let mut kernel_g = vec![0.0; nf * k];
        let mut input = vec![0.0; nc * cfg.samples];
        for f in 0..nf {
            let kf = &kernel[f * k..(f + 1) * k];
            let du = &d_mixed[f * to..(f + 1) * to];
            for c in 0..nc {
                let m = mixer[f * nc + c];
                let base = (f * nc + c) * to;
                let xc = x.channel(c);
                let mut gm = 0.0;
                for t in 0..to {
                    gm += du[t] * trace.act[base + t];
                    let da = du[t] * m;
                    let dh = if cfg.nonlinearity { da * gelu(trace.pre[base + t]).1 } else { da };
                    if dh == 0.0 {
                        continue;
                    }
                    let off = t * s;
                    for j in 0..k {
                        kernel_g[f * k + j] += dh * xc[off + j];
                        input[c * cfg.samples + off + j] += dh * kf[j];
                    }
                }
                mixer_g[f * nc + c] = gm;
            }
        }
        Ok(EegGrads {
            kernel: kernel_g,
            mixer: mixer_g,
            projection,
            input,
        })
    }

    pub fn accumulate(store: &mut ParamStore, grads: &EegGrads) -> Result<()> {
        store.accumulate_grad_slice(EEG_KERNEL, &grads.kernel)?;
        store.accumulate_grad_slice(EEG_MIXER, &grads.mixer)?;
        store.accumulate_grad_slice(EEG_PROJECTION, &grads.projection)
    }
}
