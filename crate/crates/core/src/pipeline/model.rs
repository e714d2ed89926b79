use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blur::{center_blur, compute_saliency, saliency_blur, BlurConfig, ImageTensor, DEFAULT_SALIENCY_SCALES};
use crate::diffcore::ParamStore;
use crate::encoders::{EegEncoder, EegEncoderConfig, FrozenVisualEncoder};
use crate::error::{Error, Result};
use crate::fusion::{init_mask_logit, FusionMode, FusionParams};
use crate::spectral::{gamma_from_raw, raw_from_gamma, selection_weights, BandScreen, BandSpec};
use crate::tensor::Tensor;

pub const SELECTION_LOGITS: &str = "spectral.logits";
pub const GAMMA_RAW: &str = "spectral.gamma_raw";
pub const LOGIT_SCALE: &str = "align.logit_scale";

/// Upper bound on the contrastive logit scale (temperature ≥ 0.01).
const MAX_LOGIT_SCALE: f64 = 4.605_170_185_988_092; // ln 100

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    /// Weight of the boundary calibration loss.
    pub w1: f64,
    /// Weight of the band-selection entropy.
    pub w2: f64,
    /// Selection softmax temperature.
    pub tau: f64,
    /// Two-sided miscoverage of the calibration interval.
    pub alpha: f64,
    pub temperature_init: f64,
    pub seed: u64,
    pub use_fusion: bool,
    pub use_ibwave: bool,
    pub use_bound: bool,
    pub fusion_mode: FusionMode,
    /// Use the EEG embedding as the fusion query without back-propagating into it.
    pub frozen_query: bool,
    /// Treat the batch mean and std of the calibration interval as constants.
    pub detach_stats: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 500,
            lr: 5e-3,
            w1: 0.01,
            w2: 0.01,
            tau: 1.0,
            alpha: 0.05,
            temperature_init: 0.07,
            seed: 0,
            use_fusion: true,
            use_ibwave: true,
            use_bound: true,
            fusion_mode: FusionMode::Attention,
            frozen_query: false,
            detach_stats: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(self.lr >= 0.0) || !(self.tau > 0.0) || !(self.temperature_init > 0.0) {
            return Err(Error::Config("lr must be >= 0; tau and temperature_init > 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }

    /// The blend actually used: without the fusion flag only the
    /// center-biased path remains.
    pub fn effective_mode(&self) -> FusionMode {
        if self.use_fusion {
            self.fusion_mode
        } else {
            FusionMode::CenterOnly
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub embed_dim: usize,
    pub feature_maps: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub nonlinearity: bool,
    pub visual_seed: u64,
    pub attention_dim: usize,
    pub attention_grid: [usize; 2],
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            feature_maps: 8,
            kernel_size: 9,
            stride: 2,
            nonlinearity: true,
            visual_seed: 0,
            attention_dim: 16,
            attention_grid: [32, 32],
        }
    }
}

impl EncoderSettings {
    pub fn visual(&self) -> Result<FrozenVisualEncoder> {
        FrozenVisualEncoder::new(self.visual_seed, self.embed_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlurSettings {
    /// Gaussian σ in pixels; scaled from 10 px at 224×224 when absent.
    pub sigma: Option<f64>,
    pub w0: f64,
    pub g: f64,
    pub saliency_scales: Vec<usize>,
}

impl Default for BlurSettings {
    fn default() -> Self {
        let d = BlurConfig::default();
        Self {
            sigma: None,
            w0: d.w0,
            g: d.g,
            saliency_scales: DEFAULT_SALIENCY_SCALES.to_vec(),
        }
    }
}

impl BlurSettings {
    pub fn resolve(&self, height: usize, width: usize) -> Result<BlurConfig> {
        let cfg = BlurConfig {
            sigma: self.sigma.unwrap_or_else(|| BlurConfig::scaled_sigma(height, width)),
            w0: self.w0,
            g: self.g,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Shapes of the data a model is bound to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataShape {
    pub image: (usize, usize),
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
}

/// Blur paths of one stimulus, computed once since they carry no parameters.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub original: Option<ImageTensor>,
    pub saliency_path: Option<ImageTensor>,
    pub center_path: Option<ImageTensor>,
}

fn required<'a>(img: &'a Option<ImageTensor>, what: &str) -> Result<&'a ImageTensor> {
    img.as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("prepared image lacks the {what}")))
}

impl PreparedImage {
    pub fn original(&self) -> Result<&ImageTensor> {
        required(&self.original, "original image")
    }

    pub fn saliency_path(&self) -> Result<&ImageTensor> {
        required(&self.saliency_path, "saliency-guided path")
    }

    pub fn center_path(&self) -> Result<&ImageTensor> {
        required(&self.center_path, "center-biased path")
    }
}

/// Everything static about a run: configuration, encoders and data shape.
#[derive(Debug, Clone)]
pub struct Model {
    pub train: TrainConfig,
    pub encoder: EncoderSettings,
    pub blur: BlurConfig,
    pub saliency_scales: Vec<usize>,
    pub bands: BandSpec,
    pub shape: DataShape,
    pub eeg: EegEncoder,
    pub visual: FrozenVisualEncoder,
    pub fusion: FusionParams,
}

impl Model {
    pub fn new(train: TrainConfig, encoder: EncoderSettings, blur: &BlurSettings, bands: BandSpec, shape: DataShape) -> Result<Self> {
        train.validate()?;
        bands.effective_edges(shape.sample_rate)?;
        let eeg = EegEncoder::new(EegEncoderConfig {
            channels: shape.channels,
            samples: shape.samples,
            feature_maps: encoder.feature_maps,
            kernel_size: encoder.kernel_size,
            stride: encoder.stride,
            embed_dim: encoder.embed_dim,
            nonlinearity: encoder.nonlinearity,
        })?;
        let fusion = FusionParams {
            grid: (encoder.attention_grid[0], encoder.attention_grid[1]),
            attention_dim: encoder.attention_dim,
            embed_dim: encoder.embed_dim,
        };
        fusion.validate()?;
        Ok(Self {
            blur: blur.resolve(shape.image.0, shape.image.1)?,
            saliency_scales: blur.saliency_scales.clone(),
            visual: encoder.visual()?,
            train,
            encoder,
            bands,
            shape,
            eeg,
            fusion,
        })
    }

    pub fn mode(&self) -> FusionMode {
        self.train.effective_mode()
    }

    /// Seeded initial parameters. Only the parameters the enabled modules
    /// use are created.
    pub fn init_params(&self) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        let mut store = ParamStore::new();
        self.eeg.init_params(&mut store, &mut rng)?;
        match self.mode() {
            FusionMode::Attention => self.fusion.init_params(&mut store, &mut rng)?,
            FusionMode::LearnableMask => init_mask_logit(&mut store)?,
            _ => {}
        }
        if self.train.use_ibwave {
            let n = self.bands.n_bands();
            store.insert(SELECTION_LOGITS, Tensor::zeros(&[n]), true)?;
            let raw = self
                .bands
                .gamma
                .iter()
                .map(|&g| raw_from_gamma(g, self.bands.gamma_bounds))
                .collect();
            store.insert(GAMMA_RAW, Tensor::from_vec(&[n], raw)?, true)?;
        }
        store.insert(LOGIT_SCALE, Tensor::scalar((1.0 / self.train.temperature_init).ln()), true)?;
        Ok(store)
    }

    /// Band selection weights `m` (uniform when screening is disabled).
    pub fn selection(&self, store: &ParamStore) -> Result<Vec<f64>> {
        if self.train.use_ibwave {
            selection_weights(store.value(SELECTION_LOGITS)?.data(), self.train.tau)
        } else {
            let n = self.bands.n_bands();
            Ok(vec![1.0 / n as f64; n])
        }
    }

    /// Current band layout and `∂γ/∂raw` per band.
    pub fn band_spec(&self, store: &ParamStore) -> Result<(BandSpec, Vec<f64>)> {
        let mut spec = self.bands.clone();
        if !self.train.use_ibwave {
            let n = spec.n_bands();
            return Ok((spec, vec![0.0; n]));
        }
        let (g, dg): (Vec<f64>, Vec<f64>) = store
            .value(GAMMA_RAW)?
            .data()
            .iter()
            .map(|&r| gamma_from_raw(r, spec.gamma_bounds))
            .unzip();
        spec.gamma = g;
        Ok((spec, dg))
    }

    pub fn screen(&self, store: &ParamStore) -> Result<BandScreen> {
        let (spec, _) = self.band_spec(store)?;
        BandScreen::new(&spec, self.shape.samples, self.shape.sample_rate)
    }

    /// Contrastive temperature and `∂t/∂logit_scale`.
    pub fn temperature(&self, store: &ParamStore) -> Result<(f64, f64)> {
        let ls = store.value(LOGIT_SCALE)?.data()[0];
        if ls > MAX_LOGIT_SCALE {
            Ok(((-MAX_LOGIT_SCALE).exp(), 0.0))
        } else {
            let t = (-ls).exp();
            Ok((t, -t))
        }
    }

    /// Compute the blur paths the current fusion mode needs.
    pub fn prepare(&self, images: &[ImageTensor]) -> Result<Vec<PreparedImage>> {
        let mode = self.mode();
        let need_a = matches!(
            mode,
            FusionMode::Attention | FusionMode::Linear | FusionMode::LearnableMask | FusionMode::SaliencyOnly
        );
        let need_b = matches!(
            mode,
            FusionMode::Attention | FusionMode::Linear | FusionMode::LearnableMask | FusionMode::CenterOnly
        );
        images
            .par_iter()
            .map(|img| {
                if img.dims() != self.shape.image {
                    return Err(Error::DimensionMismatch(format!(
                        "model expects {:?} images, got {:?}",
                        self.shape.image,
                        img.dims()
                    )));
                }
                let saliency_path = if need_a {
                    let sal = compute_saliency(img, &self.saliency_scales)?;
                    Some(saliency_blur(img, &sal, &self.blur)?.0)
                } else {
                    None
                };
                let center_path = if need_b { Some(center_blur(img, &self.blur)?.0) } else { None };
                Ok(PreparedImage {
                    original: (mode == FusionMode::Original).then(|| img.clone()),
                    saliency_path,
                    center_path,
                })
            })
            .collect()
    }
}
