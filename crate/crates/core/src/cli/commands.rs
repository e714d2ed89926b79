use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::RunConfig;
use super::data::{read_dataset, read_params, write_dataset, write_params};
use super::manifest::{Manifest, OutDir};
use super::pixmap::{encode_p5, encode_p6, read_p6};
use super::tensorfile::read_tensor;
use crate::blur::{
    center_blur, compute_saliency, gaussian_blur, saliency_blur, ImageTensor, WeightMap,
};
use crate::checks::{gradient_suite, SuiteCase};
use crate::error::{Error, Result};
use crate::fusion::{blend_with_map, FusionMode};
use crate::pipeline::{
    evaluate, fuse_with_trial, synth_dataset, thread_pool, train, DataShape, Model, RetrievalReport, Split,
    TrainOutcome, METRICS_HEADER,
};
use crate::spectral::{decompose_bands, static_bandpass, BandPreset, EEGTrial};
use crate::tensor::Tensor;

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub force: bool,
    pub workers: usize,
}

impl Default for Globals {
    fn default() -> Self {
        Self {
            config: None,
            seed: None,
            force: false,
            workers: 1,
        }
    }
}

/// The parsed configuration plus the exact bytes it came from (the
/// serialized defaults when no file was given).
fn load_config(g: &Globals) -> Result<(RunConfig, Vec<u8>)> {
    let (cfg, raw) = match &g.config {
        Some(path) => {
            let raw = std::fs::read(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let text = std::str::from_utf8(&raw)
                .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
            (RunConfig::parse(text)?, raw)
        }
        None => {
            let cfg = RunConfig::default();
            let raw = cfg.to_toml().into_bytes();
            (cfg, raw)
        }
    };
    Ok(match g.seed {
        Some(seed) => (cfg.with_seed(seed), raw),
        None => (cfg, raw),
    })
}

/// `config.toml` echoes the input byte for byte; `run.toml` is the
/// effective configuration after command-line overrides.
fn write_configs(out: &mut OutDir, raw: &[u8], cfg: &RunConfig) -> Result<()> {
    out.write("config.toml", raw, None)?;
    out.write("run.toml", cfg.to_toml().as_bytes(), None)
}

fn model_for(cfg: &RunConfig, split: &Split, sample_rate: f64) -> Result<Model> {
    let image = split
        .images
        .first()
        .ok_or_else(|| Error::InvalidArgument("dataset has no images".into()))?;
    let trial = &split
        .samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("dataset has no trials".into()))?
        .trial;
    let shape = DataShape {
        image: image.dims(),
        channels: trial.channels(),
        samples: trial.samples(),
        sample_rate,
    };
    Model::new(
        cfg.train.clone(),
        cfg.encoder.clone(),
        &cfg.blur,
        cfg.band_spec(sample_rate)?,
        shape,
    )
}

fn map_tensor(map: &WeightMap) -> Result<Tensor> {
    Tensor::from_vec(&[map.height(), map.width()], map.data().to_vec())
}

fn write_map(out: &mut OutDir, stem: &str, map: &WeightMap) -> Result<()> {
    out.write_tensor(&format!("{stem}.caia"), &map_tensor(map)?)?;
    out.write(&format!("{stem}.pgm"), &encode_p5(map), None)
}

/// Generate the synthetic benchmark into `out`.
pub fn cmd_synth(g: &Globals, out: &Path) -> Result<Manifest> {
    let (cfg, raw) = load_config(g)?;
    let fs = cfg.synth.sample_rate;
    let bands = cfg.band_spec(fs)?;
    let visual = cfg.encoder.visual()?;
    let data = thread_pool(g.workers)?.install(|| synth_dataset(&cfg.synth, &bands, &visual))?;

    let mut dir = OutDir::create(out, g.force)?;
    write_configs(&mut dir, &raw, &cfg)?;
    write_dataset(&mut dir, &data)?;
    let mut meta = BTreeMap::new();
    meta.insert("sample_rate".into(), json!(fs));
    meta.insert("train_classes".into(), json!(data.train.n_classes()));
    meta.insert("test_candidates".into(), json!(data.test.image_class));
    meta.insert(
        "outlier_trials".into(),
        json!(data.train.samples.iter().filter(|s| s.outlier).count()),
    );
    dir.finish("dataset", meta)
}

/// Train on a dataset directory. `steps` overrides the configured count.
pub fn cmd_train(g: &Globals, data_dir: &Path, out: &Path, steps: Option<usize>) -> Result<TrainOutcome> {
    let (mut cfg, raw) = load_config(g)?;
    if let Some(steps) = steps {
        cfg.train.steps = steps;
    }
    let (data, manifest) = read_dataset(data_dir)?;
    let model = model_for(&cfg, &data.train, manifest.meta_f64("sample_rate")?)?;
    let mut dir = OutDir::create(out, g.force)?;
    write_configs(&mut dir, &raw, &cfg)?;

    let pool = thread_pool(g.workers)?;
    let prepared = pool.install(|| model.prepare(&data.train.images))?;
    let outcome = train(&model, &data.train, &prepared, g.workers)?;

    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for row in &outcome.metrics {
        csv.push_str(&row.csv());
        csv.push('\n');
    }
    dir.write("metrics.csv", csv.as_bytes(), None)?;
    write_params(&mut dir, &outcome.store)?;
    let mut meta = BTreeMap::new();
    meta.insert("steps".into(), json!(outcome.metrics.len()));
    meta.insert("sample_rate".into(), json!(model.shape.sample_rate));
    meta.insert("counters".into(), serde_json::to_value(outcome.counters)?);
    dir.finish("params", meta)?;
    Ok(outcome)
}

pub fn write_report(dir: &mut OutDir, report: &RetrievalReport) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    dir.write("report.json", &json, None)?;

    let mut hist = String::from("bin_lo,bin_hi,count\n");
    for b in &report.histogram.bins {
        hist.push_str(&format!("{:?},{:?},{}\n", b.bin_lo, b.bin_hi, b.count));
    }
    dir.write("histogram.csv", hist.as_bytes(), None)?;

    let mut bands = String::from("band_name,lo_hz,hi_hz,weight\n");
    for b in &report.band_weights {
        bands.push_str(&format!("{},{:?},{:?},{:?}\n", b.band_name, b.lo_hz, b.hi_hz, b.weight));
    }
    dir.write("bands.csv", bands.as_bytes(), None)
}

/// Evaluate trained parameters on a dataset. The run configuration is the
/// one recorded in the parameter directory.
pub fn cmd_eval(g: &Globals, params_dir: &Path, data_dir: &Path, out: &Path) -> Result<RetrievalReport> {
    let pm = Manifest::load(params_dir, "params")?;
    let cfg = RunConfig::load(&params_dir.join("run.toml"))?;
    let (data, dm) = read_dataset(data_dir)?;
    let model = model_for(&cfg, &data.train, dm.meta_f64("sample_rate")?)?;
    let store = read_params(params_dir, &pm, &model)?;
    let initial = model.init_params()?;

    let pool = thread_pool(g.workers)?;
    let report = pool.install(|| -> Result<RetrievalReport> {
        let train_prep = model.prepare(&data.train.images)?;
        let test_prep = model.prepare(&data.test.images)?;
        evaluate(
            &model,
            &store,
            &initial,
            (&data.train, &train_prep),
            (&data.test, &test_prep),
        )
    })?;

    let mut dir = OutDir::create(out, g.force)?;
    write_report(&mut dir, &report)?;
    let mut meta = BTreeMap::new();
    meta.insert("top1".into(), json!(report.top1));
    meta.insert("top5".into(), json!(report.top5));
    dir.finish("eval", meta)?;
    Ok(report)
}

/// Select trial `index` from a `[C, T]` or `[N, C, T]` tensor.
fn pick_trial(t: &Tensor, index: usize, sample_rate: f64) -> Result<EEGTrial> {
    let (n, c, s) = match *t.shape() {
        [c, s] => (1, c, s),
        [n, c, s] => (n, c, s),
        _ => {
            return Err(Error::DimensionMismatch(format!(
                "trial file must be [C, T] or [N, C, T], got {:?}",
                t.shape()
            )))
        }
    };
    if index >= n {
        return Err(Error::InvalidArgument(format!("trial index {index} out of range (0..{n})")));
    }
    EEGTrial::new(c, s, sample_rate, t.data()[index * c * s..(index + 1) * c * s].to_vec())
}

/// Where `cmd_blur` takes its fusion query from.
#[derive(Debug, Clone)]
pub struct QuerySource {
    pub params: PathBuf,
    pub trial: PathBuf,
    pub index: usize,
}

/// Both blur paths of one image, the mode-selected fused image and the
/// weight maps. With a [`QuerySource`] the fusion query is that trial's
/// embedding under the trained parameters (and the run configuration is
/// taken from the parameter directory); without one the query is zero, so
/// attention-style modes blend the two paths equally.
pub fn cmd_blur(g: &Globals, input: &Path, out: &Path, query: Option<&QuerySource>) -> Result<()> {
    let (cfg, raw) = match query {
        Some(q) => {
            Manifest::load(&q.params, "params")?;
            let path = q.params.join("run.toml");
            (RunConfig::load(&path)?, std::fs::read(&path)?)
        }
        None => load_config(g)?,
    };
    let img = read_p6(input).map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", input.display())))?;
    let (h, w) = img.dims();
    let blur = cfg.blur.resolve(h, w)?;
    let saliency = compute_saliency(&img, &cfg.blur.saliency_scales)?;
    let gaussian = gaussian_blur(&img, blur.sigma)?;
    let (xa, ws) = saliency_blur(&img, &saliency, &blur)?;
    let (xb, wr) = center_blur(&img, &blur)?;
    let mode = cfg.train.effective_mode();

    let (fused, map): (ImageTensor, Option<WeightMap>) = match query {
        Some(q) => {
            let pm = Manifest::load(&q.params, "params")?;
            let fs = pm.meta_f64("sample_rate")?;
            let trial = pick_trial(&read_tensor(&q.trial)?, q.index, fs)?;
            let shape = DataShape {
                image: (h, w),
                channels: trial.channels(),
                samples: trial.samples(),
                sample_rate: fs,
            };
            let model = Model::new(cfg.train.clone(), cfg.encoder.clone(), &cfg.blur, cfg.band_spec(fs)?, shape)?;
            let store = read_params(&q.params, &pm, &model)?;
            let prepared = model.prepare(std::slice::from_ref(&img))?;
            fuse_with_trial(&model, &store, &prepared[0], &trial)?
        }
        None => match mode {
            FusionMode::Attention | FusionMode::Linear | FusionMode::LearnableMask => {
                let half = WeightMap::filled(h, w, 0.5);
                (blend_with_map(&xa, &xb, &half)?, Some(half))
            }
            FusionMode::SaliencyOnly => (xa.clone(), None),
            FusionMode::CenterOnly => (xb.clone(), None),
            FusionMode::Original => (img.clone(), None),
        },
    };

    let mut dir = OutDir::create(out, g.force)?;
    dir.write("config.toml", &raw, None)?;
    dir.write("gaussian.ppm", &encode_p6(&gaussian), None)?;
    dir.write("x_a.ppm", &encode_p6(&xa), None)?;
    dir.write("x_b.ppm", &encode_p6(&xb), None)?;
    dir.write("x_fused.ppm", &encode_p6(&fused), None)?;
    write_map(&mut dir, "saliency", &saliency)?;
    write_map(&mut dir, "w_s", &ws)?;
    write_map(&mut dir, "w_r", &wr)?;
    if let Some(map) = &map {
        write_map(&mut dir, "attention", map)?;
    }
    let mut meta = BTreeMap::new();
    meta.insert("fusion_mode".into(), json!(mode.name()));
    meta.insert("sigma".into(), json!(blur.sigma));
    dir.finish("blur", meta)?;
    Ok(())
}

/// Filter-bank decomposition of one trial plus the fixed band-pass
/// baselines that fit below Nyquist.
pub fn cmd_bands(g: &Globals, input: &Path, out: &Path, index: usize) -> Result<()> {
    let (cfg, raw) = load_config(g)?;
    let fs = cfg.synth.sample_rate;
    let trial = pick_trial(&read_tensor(input)?, index, fs)?;
    let spec = cfg.band_spec(fs)?;
    let sub = decompose_bands(&trial, &spec)?;
    let (c, t) = (trial.channels(), trial.samples());

    let mut dir = OutDir::create(out, g.force)?;
    dir.write("config.toml", &raw, None)?;
    let stacked: Vec<f64> = sub.components.iter().flat_map(|b| b.data().iter().copied()).collect();
    dir.write_tensor("bands.caia", &Tensor::from_vec(&[sub.n_bands(), c, t], stacked)?)?;

    let energies = sub.energies();
    let total: f64 = trial.energy();
    let mut csv = String::from("band_name,lo_hz,hi_hz,energy,fraction\n");
    for (i, e) in energies.iter().enumerate() {
        let frac = if total > 0.0 { e / total } else { 0.0 };
        csv.push_str(&format!(
            "{},{:?},{:?},{:?},{:?}\n",
            spec.band_name(i),
            sub.edges[i],
            sub.edges[i + 1],
            e,
            frac
        ));
    }
    dir.write("energies.csv", csv.as_bytes(), None)?;

    let mut skipped = Vec::new();
    for (name, preset) in [("low", BandPreset::Low), ("mid", BandPreset::Mid), ("high", BandPreset::High)] {
        let (lo, hi) = preset.range(fs);
        match static_bandpass(&trial, lo, hi, spec.delta) {
            Ok(y) => dir.write_tensor(&format!("static_{name}.caia"), &Tensor::from_vec(&[c, t], y.into_data())?)?,
            Err(Error::InvalidArgument(_)) => skipped.push(name),
            Err(e) => return Err(e),
        }
    }
    let residual = sub
        .sum()
        .iter()
        .zip(trial.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut meta = BTreeMap::new();
    meta.insert("reconstruction_max_abs_error".into(), json!(residual));
    meta.insert("skipped_presets".into(), json!(skipped));
    dir.finish("bands", meta)?;
    Ok(())
}

/// Run the finite-difference suite; the seed defaults to 0.
pub fn cmd_gradcheck(g: &Globals) -> Result<Vec<SuiteCase>> {
    thread_pool(g.workers)?.install(|| gradient_suite(g.seed.unwrap_or(0)))
}
