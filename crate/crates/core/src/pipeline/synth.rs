//! Seeded synthetic benchmark: blob-composition images and EEG trials whose
//! carriers encode the image's visual embedding inside one frequency band.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blur::ImageTensor;
use crate::encoders::FrozenVisualEncoder;
use crate::error::{Error, Result};
use crate::spectral::{static_bandpass, BandSpec, EEGTrial};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Training classes.
    pub n_classes: usize,
    /// Held-out classes, disjoint from the training ones.
    pub n_test_classes: usize,
    pub imgs_per_class: usize,
    pub trials_per_image: usize,
    pub image_size: [usize; 2],
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
    /// 1-based band index carrying the stimulus information.
    pub signal_band: usize,
    /// 1-based band index receiving filtered white noise.
    pub noise_band: usize,
    pub noise_scale: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 50,
            n_test_classes: 20,
            imgs_per_class: 4,
            trials_per_image: 2,
            image_size: [112, 112],
            channels: 17,
            samples: 250,
            sample_rate: 250.0,
            signal_band: 4,
            noise_band: 5,
            noise_scale: 0.5,
            outlier_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, bands: &BandSpec) -> Result<()> {
        let n = bands.n_bands();
        if self.n_classes < 2 || self.n_test_classes < 2 {
            return Err(Error::Config("need at least two train and two test classes".into()));
        }
        if self.imgs_per_class == 0 || self.trials_per_image == 0 {
            return Err(Error::Config("imgs_per_class and trials_per_image must be >= 1".into()));
        }
        for (what, b) in [("signal_band", self.signal_band), ("noise_band", self.noise_band)] {
            if b == 0 || b > n {
                return Err(Error::InvalidArgument(format!("{what} = {b} is not a band index in 1..={n}")));
            }
        }
        if self.signal_band == self.noise_band {
            return Err(Error::InvalidArgument("signal_band and noise_band must differ".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::Config("noise_scale must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::Config("outlier_fraction must lie in [0, 1)".into()));
        }
        if !(self.sample_rate > 0.0) || self.samples < 8 || self.channels == 0 {
            return Err(Error::Config("invalid EEG geometry".into()));
        }
        Ok(())
    }

    /// Nominal `[lo, hi]` of a 1-based band under the unscaled layout.
    pub fn band_range(&self, bands: &BandSpec, band: usize) -> (f64, f64) {
        let nyquist = self.sample_rate / 2.0;
        let e = &bands.base_edges;
        let lo = if band == 1 { 0.0 } else { e[band - 1] };
        let hi = if band == bands.n_bands() { nyquist } else { e[band] };
        (lo.min(nyquist), hi.min(nyquist))
    }
}

/// One EEG recording paired with the image that evoked it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: usize,
    pub class: usize,
    pub trial: EEGTrial,
    /// Replaced by pure noise ("attention drift").
    pub outlier: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub images: Vec<ImageTensor>,
    /// Class label of each image.
    pub image_class: Vec<usize>,
    pub samples: Vec<Sample>,
}

impl Split {
    pub fn n_classes(&self) -> usize {
        self.image_class.iter().max().map_or(0, |c| c + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    /// One image per unseen class; one trial per image (repeats averaged).
    pub test: Split,
}

#[derive(Debug, Clone)]
struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    color: [f64; 3],
}

#[derive(Debug, Clone)]
struct Prototype {
    background: [f64; 3],
    blobs: Vec<Blob>,
}

fn prototype(rng: &mut ChaCha8Rng) -> Prototype {
    let background = [0.0; 3].map(|_| rng.random_range(0.1..0.5));
    let n = rng.random_range(2..=4);
    let blobs = (0..n)
        .map(|_| Blob {
            cy: rng.random_range(0.15..0.85),
            cx: rng.random_range(0.15..0.85),
            radius: rng.random_range(0.08..0.22),
            color: [0.0; 3].map(|_| rng.random_range(0.0..1.0)),
        })
        .collect();
    Prototype { background, blobs }
}

fn nudge(rng: &mut ChaCha8Rng, v: f64, spread: f64) -> f64 {
    (v + rng.random_range(-spread..spread)).clamp(0.0, 1.0)
}

fn jitter(p: &Prototype, rng: &mut ChaCha8Rng) -> Prototype {
    Prototype {
        background: p.background.map(|c| nudge(rng, c, 0.03)),
        blobs: p
            .blobs
            .iter()
            .map(|b| Blob {
                cy: nudge(rng, b.cy, 0.04),
                cx: nudge(rng, b.cx, 0.04),
                radius: b.radius * rng.random_range(0.9..1.1),
                color: b.color.map(|c| nudge(rng, c, 0.05)),
            })
            .collect(),
    }
}

fn render(p: &Prototype, h: usize, w: usize) -> ImageTensor {
    let scale = h.min(w) as f64;
    let soft = 1.5;
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let mut px = p.background;
            for b in &p.blobs {
                let dy = y as f64 + 0.5 - b.cy * h as f64;
                let dx = x as f64 + 0.5 - b.cx * w as f64;
                let d = (dy * dy + dx * dx).sqrt();
                let alpha = 1.0 / (1.0 + ((d - b.radius * scale) / soft).exp());
                for c in 0..3 {
                    px[c] = (1.0 - alpha) * px[c] + alpha * b.color[c];
                }
            }
            // stored at 32-bit precision so files round-trip exactly
            data.extend(px.iter().map(|&v| v.clamp(0.0, 1.0) as f32 as f64));
        }
    }
    ImageTensor::new(h, w, data).expect("length matches by construction")
}

/// Fixed "brain" shared by every trial: spatial mixing, carrier bins and phases.
struct Generator {
    mixing: Vec<f64>,
    freqs: Vec<f64>,
    phases: Vec<f64>,
    channels: usize,
    samples: usize,
    sample_rate: f64,
}

impl Generator {
    fn new(cfg: &SynthConfig, bands: &BandSpec, embed_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (lo, hi) = cfg.band_range(bands, cfg.signal_band);
        let bin = cfg.sample_rate / cfg.samples as f64;
        // exact DFT bins, clear of the crossfade on both sides
        let bins: Vec<f64> = (1..cfg.samples / 2)
            .map(|k| k as f64 * bin)
            .filter(|&f| f >= lo + bands.delta && f <= hi - bands.delta)
            .collect();
        if bins.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "signal band {} ({lo}–{hi} Hz) holds no usable frequency bins",
                cfg.signal_band
            )));
        }
        let mixing = (0..cfg.channels * embed_dim).map(|_| rng.sample(StandardNormal)).collect();
        let freqs = (0..embed_dim).map(|j| bins[j % bins.len()]).collect();
        let phases = (0..embed_dim).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Ok(Self {
            mixing,
            freqs,
            phases,
            channels: cfg.channels,
            samples: cfg.samples,
            sample_rate: cfg.sample_rate,
        })
    }

    fn signal(&self, amplitudes: &[f64]) -> Vec<f64> {
        let d = amplitudes.len();
        let mut carriers = vec![0.0; d * self.samples];
        for j in 0..d {
            let w = 2.0 * PI * self.freqs[j] / self.sample_rate;
            for t in 0..self.samples {
                carriers[j * self.samples + t] = amplitudes[j] * (w * t as f64 + self.phases[j]).cos();
            }
        }
        let mut out = vec![0.0; self.channels * self.samples];
        for c in 0..self.channels {
            let row = &mut out[c * self.samples..(c + 1) * self.samples];
            for j in 0..d {
                let m = self.mixing[c * d + j];
                let carrier = &carriers[j * self.samples..(j + 1) * self.samples];
                row.iter_mut().zip(carrier).for_each(|(o, v)| *o += m * v);
            }
        }
        out
    }
}

fn gaussian_vec(n: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn to_f32(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

/// Generate train and test splits. The EEG of an image is a linear code of
/// `visual.encode(image)`, so a model can only retrieve unseen classes by
/// learning that code rather than memorizing labels.
pub fn synth_dataset(cfg: &SynthConfig, bands: &BandSpec, visual: &FrozenVisualEncoder) -> Result<Dataset> {
    cfg.validate(bands)?;
    bands.validate()?;
    let [h, w] = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gen = Generator::new(cfg, bands, visual.embed_dim(), &mut rng)?;
    let (nlo, nhi) = cfg.band_range(bands, cfg.noise_band);
    let (c, t) = (cfg.channels, cfg.samples);

    let trial = |image: &ImageTensor, rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
        let mut x = gen.signal(&visual.encode(image)?);
        if cfg.noise_scale > 0.0 {
            let white = EEGTrial::new(c, t, cfg.sample_rate, gaussian_vec(c * t, cfg.noise_scale, rng))?;
            let noise = static_bandpass(&white, nlo, nhi, bands.delta)?;
            x.iter_mut().zip(noise.data()).for_each(|(a, b)| *a += b);
        }
        Ok(x)
    };

    let train_protos: Vec<Prototype> = (0..cfg.n_classes).map(|_| prototype(&mut rng)).collect();
    let test_protos: Vec<Prototype> = (0..cfg.n_test_classes).map(|_| prototype(&mut rng)).collect();

    let mut train = Split::default();
    for (class, proto) in train_protos.iter().enumerate() {
        for _ in 0..cfg.imgs_per_class {
            let img = render(&jitter(proto, &mut rng), h, w);
            let index = train.images.len();
            for _ in 0..cfg.trials_per_image {
                let data = to_f32(trial(&img, &mut rng)?);
                train.samples.push(Sample {
                    image: index,
                    class,
                    trial: EEGTrial::new(c, t, cfg.sample_rate, data)?,
                    outlier: false,
                });
            }
            train.images.push(img);
            train.image_class.push(class);
        }
    }

    let n_out = (cfg.outlier_fraction * train.samples.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..train.samples.len()).collect();
    order.shuffle(&mut rng);
    let mut chosen = order[..n_out].to_vec();
    chosen.sort_unstable();
    for i in chosen {
        let s = &mut train.samples[i];
        let rms = (s.trial.energy() / (c * t) as f64).sqrt().max(1e-6);
        let data = to_f32(gaussian_vec(c * t, rms, &mut rng));
        s.trial = s.trial.with_data(data)?;
        s.outlier = true;
    }

    let mut test = Split::default();
    for (class, proto) in test_protos.iter().enumerate() {
        let img = render(&jitter(proto, &mut rng), h, w);
        let reps = (0..cfg.trials_per_image)
            .map(|_| EEGTrial::new(c, t, cfg.sample_rate, trial(&img, &mut rng)?))
            .collect::<Result<Vec<_>>>()?;
        let avg = EEGTrial::average(&reps)?;
        let avg = avg.with_data(to_f32(avg.data().to_vec()))?;
        test.samples.push(Sample {
            image: class,
            class,
            trial: avg,
            outlier: false,
        });
        test.images.push(img);
        test.image_class.push(class);
    }
    Ok(Dataset { train, test })
}
