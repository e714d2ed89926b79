//! The finite-difference certification suite: every hand-written backward
//! pass in the crate checked against central differences on small seeded
//! inputs. Used by the `gradcheck` subcommand and by the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blur::{blend_backward, center_blur, compute_saliency, saliency_blur, BlurConfig, GaussianBlur, ImageTensor};
use crate::diffcore::{fd_gradient_check, GradCheckReport, ParamStore};
use crate::encoders::{EegEncoder, EegEncoderConfig, FrozenVisualEncoder};
use crate::error::{Error, Result};
use crate::fusion::{attention_backward, attention_forward, FusionParams, KEY_PROJ, QUERY_PROJ};
use crate::pipeline::{
    synth_dataset, BatchItem, BlurSettings, Counters, DataShape, EncoderSettings, Model, Objective, SynthConfig,
    TrainConfig,
};
use crate::spectral::{
    entropy_grad_logits, gamma_from_raw, raw_from_gamma, selection_entropy, selection_weights, softmax_backward,
    BandScreen, BandSpec, EEGTrial,
};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check<F>(f: F, store: &ParamStore) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64> + Sync,
{
    fd_gradient_check(f, store, FD_STEP, FD_TOL)
}

/// A random projection of a blur path, differentiated with respect to the
/// image. The saliency map is computed once and held fixed.
fn blur_path(seed: u64, saliency: bool) -> Result<GradCheckReport> {
    let (h, w) = (9, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = ImageTensor::new(h, w, uniform(&mut rng, h * w * 3, 0.0, 1.0))?;
    let probe = uniform(&mut rng, h * w * 3, -0.5, 0.5);
    let cfg = BlurConfig {
        sigma: 1.1,
        w0: 0.4,
        g: 3.0,
    };
    let sal = compute_saliency(&img, &[1, 2])?;
    let run = |data: &[f64]| -> Result<(f64, crate::blur::WeightMap)> {
        let im = ImageTensor::new(h, w, data.to_vec())?;
        let (out, weights) = if saliency {
            saliency_blur(&im, &sal, &cfg)?
        } else {
            center_blur(&im, &cfg)?
        };
        Ok((dot(out.data(), &probe), weights))
    };
    let mut store = ParamStore::new();
    store.insert("image", Tensor::from_vec(&[h, w, 3], img.data().to_vec())?, true)?;
    let (_, weights) = run(img.data())?;
    let grad = blend_backward(&probe, &weights, &GaussianBlur::new(h, w, cfg.sigma)?);
    store.accumulate_grad_slice("image", &grad)?;
    check(|s| Ok(run(s.value("image")?.data())?.0), &store)
}

/// Attention fusion with respect to the query, both projections and the
/// two blur paths.
fn fusion(seed: u64) -> Result<GradCheckReport> {
    let (h, w) = (9, 11);
    let params = FusionParams {
        grid: (4, 5),
        attention_dim: 3,
        embed_dim: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    params.init_params(&mut store, &mut rng)?;
    let xa = ImageTensor::new(h, w, uniform(&mut rng, h * w * 3, 0.0, 1.0))?;
    let xb = ImageTensor::new(h, w, uniform(&mut rng, h * w * 3, 0.0, 1.0))?;
    let q = uniform(&mut rng, 4, -1.0, 1.0);
    let probe = uniform(&mut rng, h * w * 3, -1.0, 1.0);
    store.insert("q", Tensor::from_vec(&[4], q.clone())?, true)?;
    store.insert("xa", Tensor::from_vec(&[h, w, 3], xa.data().to_vec())?, true)?;
    store.insert("xb", Tensor::from_vec(&[h, w, 3], xb.data().to_vec())?, true)?;

    let trace = attention_forward(&q, &xa, &xb, &store, &params)?;
    let g = attention_backward(&q, &xa, &xb, &trace, &probe, &store)?;
    store.accumulate_grad_slice("q", &g.query)?;
    store.accumulate_grad_slice(QUERY_PROJ, &g.query_proj)?;
    store.accumulate_grad_slice(KEY_PROJ, &g.key_proj)?;
    store.accumulate_grad_slice("xa", &g.xa)?;
    store.accumulate_grad_slice("xb", &g.xb)?;

    let f = |s: &ParamStore| -> Result<f64> {
        let xa = ImageTensor::new(h, w, s.value("xa")?.data().to_vec())?;
        let xb = ImageTensor::new(h, w, s.value("xb")?.data().to_vec())?;
        let t = attention_forward(s.value("q")?.data(), &xa, &xb, s, &params)?;
        Ok(dot(t.fused.data(), &probe))
    };
    check(f, &store)
}

/// Band screening plus the entropy term, with respect to the selection
/// logits `w` and the unconstrained edge scales behind `γ`.
fn spectral(seed: u64) -> Result<GradCheckReport> {
    let (c, t, fs, tau, w2) = (3, 64, 128.0, 0.8, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = EEGTrial::new(c, t, fs, uniform(&mut rng, c * t, -0.5, 0.5))?;
    let probe = uniform(&mut rng, c * t, -0.5, 0.5);
    // wide crossfades so every interior edge has bins on its slope
    let base = BandSpec {
        delta: 6.0,
        ..BandSpec::canonical(fs)
    };
    let bounds = base.gamma_bounds;
    let spec_for = |raw: &[f64]| BandSpec {
        gamma: raw.iter().map(|&r| gamma_from_raw(r, bounds).0).collect(),
        ..base.clone()
    };
    let f = |s: &ParamStore| -> Result<f64> {
        let m = selection_weights(s.value("logits")?.data(), tau)?;
        let screen = BandScreen::new(&spec_for(s.value("gamma_raw")?.data()), t, fs)?;
        let (y, _) = screen.forward(&x, &m)?;
        Ok(dot(y.data(), &probe) + w2 * selection_entropy(&m))
    };

    let logits = uniform(&mut rng, 5, -0.5, 0.5);
    let raw: Vec<f64> = uniform(&mut rng, 5, 0.8, 1.25)
        .into_iter()
        .map(|g| raw_from_gamma(g, bounds))
        .collect();
    let mut store = ParamStore::new();
    store.insert("logits", Tensor::from_vec(&[5], logits.clone())?, true)?;
    store.insert("gamma_raw", Tensor::from_vec(&[5], raw.clone())?, true)?;

    let m = selection_weights(&logits, tau)?;
    let screen = BandScreen::new(&spec_for(&raw), t, fs)?;
    let (_, trace) = screen.forward(&x, &m)?;
    let (d_m, d_gamma) = screen.backward(&trace, &m, &probe);
    let d_logits: Vec<f64> = softmax_backward(&m, &d_m, tau)
        .into_iter()
        .zip(entropy_grad_logits(&m, tau))
        .map(|(a, b)| a + w2 * b)
        .collect();
    store.accumulate_grad_slice("logits", &d_logits)?;
    let d_raw: Vec<f64> = raw
        .iter()
        .zip(&d_gamma)
        .map(|(&r, &dg)| dg * gamma_from_raw(r, bounds).1)
        .collect();
    store.accumulate_grad_slice("gamma_raw", &d_raw)?;
    check(f, &store)
}

fn eeg_encoder(seed: u64) -> Result<GradCheckReport> {
    let enc = EegEncoder::new(EegEncoderConfig {
        feature_maps: 3,
        kernel_size: 5,
        ..EegEncoderConfig::new(4, 40, 6)
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    enc.init_params(&mut store, &mut rng)?;
    let x = EEGTrial::new(4, 40, 100.0, uniform(&mut rng, 160, -1.0, 1.0))?;
    let probe = uniform(&mut rng, 6, -1.0, 1.0);
    let trace = enc.forward(&x, &store)?;
    let grads = enc.backward(&x, &store, &trace, &probe)?;
    EegEncoder::accumulate(&mut store, &grads)?;
    check(|s| Ok(dot(&enc.encode(&x, s)?, &probe)), &store)
}

fn visual_encoder(seed: u64) -> Result<GradCheckReport> {
    let enc = FrozenVisualEncoder::new(seed, 5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = ImageTensor::new(16, 16, uniform(&mut rng, 768, 0.0, 1.0))?;
    let probe = uniform(&mut rng, 5, -1.0, 1.0);
    let mut store = ParamStore::new();
    store.insert("image", Tensor::from_vec(&[16, 16, 3], img.data().to_vec())?, true)?;
    let grad = enc.backward(&enc.forward(&img)?, &probe)?;
    store.accumulate_grad_slice("image", &grad)?;
    let f = |s: &ParamStore| -> Result<f64> {
        let im = ImageTensor::new(16, 16, s.value("image")?.data().to_vec())?;
        Ok(dot(&enc.encode(&im)?, &probe))
    };
    check(f, &store)
}

/// The full training objective on a tiny synthetic batch, differentiated
/// with respect to every parameter (encoder, fusion, screening, scale).
fn end_to_end(seed: u64, w1: f64, w2: f64) -> Result<GradCheckReport> {
    let synth = SynthConfig {
        n_classes: 3,
        n_test_classes: 2,
        imgs_per_class: 2,
        trials_per_image: 1,
        image_size: [16, 16],
        channels: 3,
        samples: 64,
        sample_rate: 64.0,
        noise_scale: 0.3,
        seed,
        ..SynthConfig::default()
    };
    let encoder = EncoderSettings {
        embed_dim: 6,
        feature_maps: 2,
        kernel_size: 5,
        attention_dim: 3,
        attention_grid: [4, 4],
        ..EncoderSettings::default()
    };
    let blur = BlurSettings {
        sigma: Some(1.0),
        saliency_scales: vec![2, 4],
        ..BlurSettings::default()
    };
    let train = TrainConfig {
        w1,
        w2,
        // a narrow interval so the six-sample batch has outliers
        alpha: 0.4,
        detach_stats: false,
        seed,
        ..TrainConfig::default()
    };
    let bands = BandSpec::canonical(synth.sample_rate);
    let data = synth_dataset(&synth, &bands, &encoder.visual()?)?;
    let shape = DataShape {
        image: (16, 16),
        channels: synth.channels,
        samples: synth.samples,
        sample_rate: synth.sample_rate,
    };
    let model = Model::new(train, encoder, &blur, bands, shape)?;
    let prepared = model.prepare(&data.train.images)?;

    // broadband noise so every band edge sees energy
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let trials: Vec<EEGTrial> = data.train.samples
        .iter()
        .map(|s| {
            let noisy = s.trial.data().iter().map(|v| v + rng.random::<f64>() - 0.5).collect();
            s.trial.with_data(noisy)
        })
        .collect::<Result<_>>()?;
    let batch: Vec<BatchItem> = trials
        .iter()
        .zip(&data.train.samples)
        .map(|(t, s)| BatchItem {
            trial: t,
            image: &prepared[s.image],
        })
        .collect();

    let mut store = model.init_params()?;
    for (_, p) in store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += 0.1 * (rng.random::<f64>() - 0.5));
    }
    let counters = Counters::default();
    let obj = Objective::new(&model, &counters);
    let base = obj.loss_and_grad(&mut store, &batch)?;
    if w1 > 0.0 && base.bound == 0.0 {
        return Err(Error::InvalidArgument("fixture batch has no calibration outliers".into()));
    }
    check(|s| Ok(obj.loss(s, &batch)?.overall), &store)
}

/// Run every case. The result order is fixed.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteCase>> {
    let cases: Vec<(&'static str, Box<dyn Fn() -> Result<GradCheckReport>>)> = vec![
        ("blur.saliency_path", Box::new(move || blur_path(seed, true))),
        ("blur.center_path", Box::new(move || blur_path(seed, false))),
        ("fusion.attention", Box::new(move || fusion(seed))),
        ("spectral.screen_entropy", Box::new(move || spectral(seed))),
        ("encoders.eeg", Box::new(move || eeg_encoder(seed))),
        ("encoders.visual", Box::new(move || visual_encoder(seed))),
        ("objective.clip", Box::new(move || end_to_end(seed, 0.0, 0.0))),
        ("objective.clip_bound", Box::new(move || end_to_end(seed, 1.0, 0.0))),
        ("objective.clip_entropy", Box::new(move || end_to_end(seed, 0.0, 1.0))),
    ];
    cases
        .into_iter()
        .map(|(name, run)| Ok(SuiteCase { name, report: run()? }))
        .collect()
}
