//! End-to-end acceptance run. Each criterion prints exactly one
//! `A<n> PASS|FAIL ...` line; the process exits non-zero if any fails.
//!
//! Runs with its own harness so the lines are always visible:
//! `cargo test -p neuroalign --test acceptance`.

use std::path::Path;
use std::time::{Duration, Instant};

use neuroalign::align::{batch_stats, boundary_loss, normal_upper_quantile};
use neuroalign::checks::{gradient_suite, FD_STEP, FD_TOL};
use neuroalign::cli::{
    cmd_synth, cmd_train, decode_p5, decode_p6, decode_tensor, encode_p5, encode_p6, encode_tensor, write_report,
    Globals, OutDir,
};
use neuroalign::pipeline::{
    evaluate, matched_similarities, synth_dataset, train, BlurSettings, DataShape, Dataset, EncoderSettings, Model,
    PreparedImage, SynthConfig, TrainConfig, TrainOutcome,
};
use neuroalign::spectral::{decompose_bands, selection_entropy, selection_weights, BandSpec, EEGTrial};
use neuroalign::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ------------------------------------------------------------------ A1

fn a1_gradients() -> Result<Outcome> {
    let start = Instant::now();
    let cases = gradient_suite(0)?;
    let elapsed = start.elapsed();
    let required = [
        "blur.saliency_path",
        "blur.center_path",
        "fusion.attention",
        "spectral.screen_entropy",
        "objective.clip",
        "objective.clip_bound",
        "objective.clip_entropy",
    ];
    let missing: Vec<_> = required
        .iter()
        .filter(|r| !cases.iter().any(|c| c.name == **r))
        .collect();
    let failed: Vec<_> = cases.iter().filter(|c| !c.report.pass).map(|c| c.name).collect();
    let worst = cases.iter().map(|c| c.report.max_rel_err).fold(0.0, f64::max);
    outcome(
        missing.is_empty() && failed.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} cases, worst rel err {worst:.2e} (h={FD_STEP:e}, tol={FD_TOL:e}), failed {failed:?}, missing {missing:?}, {}",
            cases.len(),
            secs(elapsed)
        ),
    )
}

// ------------------------------------------------------------------ A2

fn a2_reconstruction() -> Result<Outcome> {
    let start = Instant::now();
    let (c, t, fs) = (17, 250, 250.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut redraws = 0;
    for _ in 0..100 {
        let data: Vec<f64> = (0..c * t).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let trial = EEGTrial::new(c, t, fs, data)?;
        // scales that make adjacent edges cross describe no band layout;
        // draw again until the layout is valid
        let spec = loop {
            let mut spec = BandSpec::canonical(fs);
            spec.gamma = (0..spec.n_bands()).map(|_| rng.random_range(0.5..=2.0)).collect();
            if spec.effective_edges(fs).is_ok() {
                break spec;
            }
            redraws += 1;
        };
        let sum = decompose_bands(&trial, &spec)?.sum();
        for (a, b) in sum.iter().zip(trial.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-9 && elapsed < Duration::from_secs(10),
        format!("max |sum - x| = {worst:.2e} over 100 trials ({redraws} invalid layouts redrawn), {}", secs(elapsed)),
    )
}

// ------------------------------------------------------------------ A3

fn bound_loss(s: &[f64]) -> Result<f64> {
    let stats = batch_stats(s, 0.05)?;
    Ok(boundary_loss(s, &stats, true)?.loss)
}

fn a3_boundary() -> Result<Outcome> {
    let mut s = vec![0.5; 7];
    s.push(-0.5);
    // independent hand computation: mean, population deviation, lower edge,
    // and the single outlier's distance below it
    let mean = (7.0 * 0.5 - 0.5) / 8.0;
    let var = (7.0 * (0.5f64 - mean).powi(2) + (-0.5f64 - mean).powi(2)) / 8.0;
    let lower = mean - normal_upper_quantile(0.025)? * var.sqrt();
    let oracle = lower - (-0.5);
    let hand = bound_loss(&s)?;
    let hand_ok = (hand - oracle).abs() < 1e-9 && (hand - 0.227).abs() < 1e-3;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_shift, mut worst_scale, mut active) = (0.0f64, 0.0f64, 0);
    for _ in 0..1000 {
        let n = rng.random_range(8..64);
        let mut s: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        // a few far points so most batches have outliers
        for _ in 0..rng.random_range(0..3) {
            let i = rng.random_range(0..n);
            s[i] = rng.random_range(-1.0..1.0);
        }
        let base = bound_loss(&s)?;
        active += usize::from(base > 0.0);
        let c: f64 = rng.random_range(-1.0..1.0);
        let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
        worst_shift = worst_shift.max((bound_loss(&shifted)? - base).abs());
        let a: f64 = rng.random_range(0.1..10.0);
        let scaled: Vec<f64> = s.iter().map(|v| v * a).collect();
        worst_scale = worst_scale.max((bound_loss(&scaled)? - a * base).abs());
    }
    outcome(
        hand_ok && worst_shift < 1e-12 && worst_scale < 1e-12 && active > 0,
        format!(
            "hand batch {hand:.6} vs {oracle:.6}; shift err {worst_shift:.1e}, scale err {worst_scale:.1e} ({active}/1000 batches with outliers)"
        ),
    )
}

// ------------------------------------------------------------------ A4

fn a4_softmax() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut sum_err, mut entropy_ok) = (0.0f64, true);
    for _ in 0..1000 {
        let n = rng.random_range(2..12);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let tau = rng.random_range(0.05..5.0);
        let m = selection_weights(&logits, tau)?;
        sum_err = sum_err.max((m.iter().sum::<f64>() - 1.0).abs());
        let h = selection_entropy(&m);
        entropy_ok &= (-1e-12..=(n as f64).ln() + 1e-12).contains(&h);
    }
    let m = selection_weights(&[0.7; 5], 1.0)?;
    let uniform = m.iter().all(|v| (v - 0.2).abs() < 1e-12);
    let sharp = selection_weights(&[0.0, 1.0, 2.0, 3.0, 4.0], 0.05)?;
    let peak = sharp.iter().cloned().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        sum_err < 1e-12 && entropy_ok && uniform && peak > 0.999 && elapsed < Duration::from_secs(1),
        format!(
            "sum err {sum_err:.1e}, entropy in range {entropy_ok}, uniform {uniform}, peak at tau=0.05 {peak:.6}, {}",
            secs(elapsed)
        ),
    )
}

// ------------------------------------------------------- shared benchmark

struct Bench {
    data: Dataset,
    shape: DataShape,
    bands: BandSpec,
}

impl Bench {
    fn new(synth: SynthConfig) -> Result<Self> {
        let bands = BandSpec::canonical(synth.sample_rate);
        let data = synth_dataset(&synth, &bands, &EncoderSettings::default().visual()?)?;
        let shape = DataShape {
            image: (synth.image_size[0], synth.image_size[1]),
            channels: synth.channels,
            samples: synth.samples,
            sample_rate: synth.sample_rate,
        };
        Ok(Self { data, shape, bands })
    }

    fn model(&self, cfg: TrainConfig) -> Result<Model> {
        Model::new(cfg, EncoderSettings::default(), &BlurSettings::default(), self.bands.clone(), self.shape)
    }

    fn prepare(&self, model: &Model) -> Result<(Vec<PreparedImage>, Vec<PreparedImage>)> {
        Ok((model.prepare(&self.data.train.images)?, model.prepare(&self.data.test.images)?))
    }

    fn fit(&self, model: &Model, prepared: &[PreparedImage]) -> Result<TrainOutcome> {
        train(model, &self.data.train, prepared, workers())
    }
}

fn noiseless() -> SynthConfig {
    SynthConfig { noise_scale: 0.0, ..SynthConfig::default() }
}

// ------------------------------------------------------------------ A5

fn a5_retrieval(bench: &Bench) -> Result<Outcome> {
    let start = Instant::now();
    let model = bench.model(TrainConfig::default())?;
    let (train_p, test_p) = bench.prepare(&model)?;
    let out = bench.fit(&model, &train_p)?;
    let init = model.init_params()?;
    let report = evaluate(&model, &out.store, &init, (&bench.data.train, &train_p), (&bench.data.test, &test_p))?;
    let elapsed = start.elapsed();
    outcome(
        report.top1 >= 0.9 && elapsed < Duration::from_secs(300),
        format!(
            "top-1 {:.3}, top-5 {:.3} on {} test classes after {} steps, {}",
            report.top1,
            report.top5,
            bench.data.test.n_classes(),
            model.train.steps,
            secs(elapsed)
        ),
    )
}

// ------------------------------------------------------------------ A6

fn a6_band_discovery() -> Result<Outcome> {
    let synth = SynthConfig { noise_scale: 1.0, ..SynthConfig::default() };
    let bench = Bench::new(synth.clone())?;
    let model = bench.model(TrainConfig { steps: 300, ..TrainConfig::default() })?;
    let (train_p, _) = bench.prepare(&model)?;
    let out = bench.fit(&model, &train_p)?;
    let m = model.selection(&out.store)?;
    let winner = m
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i + 1)
        .unwrap_or(0);
    outcome(
        winner == synth.signal_band,
        format!(
            "selection {:?}; argmax band {winner} ({}), signal planted in band {}",
            m.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            bench.bands.band_name(winner.saturating_sub(1)),
            synth.signal_band
        ),
    )
}

// ------------------------------------------------------------------ A7

fn a7_entropy(bench: &Bench) -> Result<Outcome> {
    let final_entropy = |w2: f64| -> Result<f64> {
        let model = bench.model(TrainConfig { steps: 300, w2, ..TrainConfig::default() })?;
        let (train_p, _) = bench.prepare(&model)?;
        let out = bench.fit(&model, &train_p)?;
        Ok(selection_entropy(&model.selection(&out.store)?))
    };
    let with = final_entropy(0.01)?;
    let without = final_entropy(0.0)?;
    outcome(
        with < without,
        format!("final H(M) {with:.5} with w2=0.01 vs {without:.5} with w2=0"),
    )
}

// ------------------------------------------------------------------ A8

fn a8_calibration() -> Result<Outcome> {
    let bench = Bench::new(SynthConfig { outlier_fraction: 0.1, ..noiseless() })?;
    let fraction = |use_bound: bool| -> Result<f64> {
        let model = bench.model(TrainConfig { use_bound, ..TrainConfig::default() })?;
        let (train_p, _) = bench.prepare(&model)?;
        let out = bench.fit(&model, &train_p)?;
        let s = matched_similarities(&model, &out.store, &bench.data.train, &train_p)?;
        Ok(batch_stats(&s, model.train.alpha)?.outlier_fraction())
    };
    let with = fraction(true)?;
    let without = fraction(false)?;
    outcome(
        with < without,
        format!("outliers beyond the 95% interval: {with:.4} with the bound loss vs {without:.4} without"),
    )
}

// ------------------------------------------------------------------ A9

fn well_formed(dir: &Path, n_bands: usize, n_test: usize) -> std::result::Result<(), String> {
    let text = std::fs::read_to_string(dir.join("report.json")).map_err(|e| e.to_string())?;
    let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let num = |k: &str| json[k].as_f64().ok_or(format!("{k} missing"));
    for k in ["top1", "top5", "outlier_frac_before", "outlier_frac_after"] {
        let v = num(k)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("{k} = {v} outside [0, 1]"));
        }
    }
    let bands = json["band_weights"].as_array().ok_or("band_weights missing")?;
    let total: f64 = bands.iter().filter_map(|b| b["weight"].as_f64()).sum();
    if bands.len() != n_bands || (total - 1.0).abs() > 1e-9 {
        return Err(format!("{} band weights summing to {total}", bands.len()));
    }
    if json["per_class"].as_array().map(Vec::len) != Some(n_test) {
        return Err("per_class does not cover the test classes".into());
    }
    let hist = std::fs::read_to_string(dir.join("histogram.csv")).map_err(|e| e.to_string())?;
    if !hist.starts_with("bin_lo,bin_hi,count\n") || hist.lines().count() < 2 {
        return Err("malformed histogram.csv".into());
    }
    let bands_csv = std::fs::read_to_string(dir.join("bands.csv")).map_err(|e| e.to_string())?;
    if bands_csv.lines().count() != n_bands + 1 {
        return Err("malformed bands.csv".into());
    }
    Ok(())
}

fn a9_ablation(bench: &Bench) -> Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    let mut problems = Vec::new();
    let mut rows = Vec::new();
    for code in 0..8u8 {
        let (fusion, ibwave, bound) = (code & 4 != 0, code & 2 != 0, code & 1 != 0);
        let cfg = TrainConfig {
            steps: 200,
            use_fusion: fusion,
            use_ibwave: ibwave,
            use_bound: bound,
            ..TrainConfig::default()
        };
        let model = bench.model(cfg)?;
        let (train_p, test_p) = bench.prepare(&model)?;
        let out = bench.fit(&model, &train_p)?;
        let init = model.init_params()?;
        let report =
            evaluate(&model, &out.store, &init, (&bench.data.train, &train_p), (&bench.data.test, &test_p))?;
        let dir = tmp.path().join(format!("f{}i{}b{}", u8::from(fusion), u8::from(ibwave), u8::from(bound)));
        let mut od = OutDir::create(&dir, false)?;
        write_report(&mut od, &report)?;
        od.finish("eval", Default::default())?;

        let c = out.counters;
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        if let Err(e) = well_formed(&dir, bench.bands.n_bands(), bench.data.test.n_classes()) {
            problems.push(format!("{name}: {e}"));
        }
        let fired = (c.fusion_calls > 0, c.ibwave_calls > 0, c.bound_calls > 0);
        if fired != (fusion, ibwave, bound) {
            problems.push(format!("{name}: counters {c:?}"));
        }
        rows.push(format!("{name}={:.2}", report.top1));
    }
    outcome(
        problems.is_empty(),
        format!("8 runs at 200 steps, top-1 {}; problems {problems:?}", rows.join(" ")),
    )
}

// ----------------------------------------------------------------- A10

fn a10_formats() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut notes = Vec::new();

    let mut tensor_ok = true;
    for rank in 0..4 {
        let dims: Vec<usize> = (0..rank).map(|_| rng.random_range(0..5)).collect();
        let n = dims.iter().product();
        // f32-representable values survive the f32 payload bit-exactly
        let data: Vec<f64> = (0..n).map(|_| rng.random::<f32>() as f64 * 8.0 - 4.0).collect();
        let t = Tensor::from_vec(&dims, data)?;
        let bytes = encode_tensor(&t);
        let back = decode_tensor(&bytes)?;
        tensor_ok &= back == t && encode_tensor(&back) == bytes;
    }
    notes.push(format!("tensor {tensor_ok}"));

    let mut pix_ok = true;
    for _ in 0..20 {
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let rgb: Vec<u8> = (0..h * w * 3).map(|_| rng.random()).collect();
        let mut p6 = format!("P6\n{w} {h}\n255\n").into_bytes();
        p6.extend_from_slice(&rgb);
        pix_ok &= encode_p6(&decode_p6(&p6)?) == p6;
        let grey: Vec<u8> = (0..h * w).map(|_| rng.random()).collect();
        let mut p5 = format!("P5\n{w} {h}\n255\n").into_bytes();
        p5.extend_from_slice(&grey);
        pix_ok &= encode_p5(&decode_p5(&p5)?) == p5;
    }
    notes.push(format!("pixmap {pix_ok}"));

    let tmp = tempfile::tempdir()?;
    let config = tmp.path().join("small.toml");
    std::fs::write(
        &config,
        "[synth]\nn_classes = 6\nn_test_classes = 2\nimgs_per_class = 2\nimage_size = [32, 32]\n\
         channels = 8\nsamples = 128\nsample_rate = 128.0\n\n[train]\nsteps = 25\nbatch_size = 8\n\n\
         [encoder]\nattention_grid = [8, 8]\n\n[blur]\nsaliency_scales = [2, 4]\n",
    )?;
    let g = |workers| Globals { config: Some(config.clone()), workers, ..Globals::default() };
    let data = tmp.path().join("data");
    cmd_synth(&g(1), &data)?;
    let mut csvs = Vec::new();
    for workers in [1, 4, 1] {
        let out = tmp.path().join(format!("run{}", csvs.len()));
        cmd_train(&g(workers), &data, &out, None)?;
        csvs.push(std::fs::read(out.join("metrics.csv"))?);
    }
    let csv_ok = csvs.windows(2).all(|w| w[0] == w[1]) && csvs[0].len() > 100;
    notes.push(format!("metrics.csv identical at workers 1/4/1 {csv_ok}"));

    outcome(tensor_ok && pix_ok && csv_ok, notes.join(", "))
}

// ----------------------------------------------------------------- main

fn main() {
    let mut failures = 0;
    let mut report = |id: &str, title: &str, result: Result<Outcome>| {
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!pass);
        println!("{id} {} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    };

    report("A1", "gradient oracle", a1_gradients());
    report("A2", "spectral reconstruction", a2_reconstruction());
    report("A3", "boundary-loss oracle", a3_boundary());
    report("A4", "softmax/entropy laws", a4_softmax());

    match Bench::new(noiseless()) {
        Ok(bench) => {
            report("A5", "zero-shot retrieval", a5_retrieval(&bench));
            report("A6", "band-screening discovery", a6_band_discovery());
            report("A7", "entropy regularizer", a7_entropy(&bench));
            report("A8", "calibration effect", a8_calibration());
            report("A9", "ablation harness", a9_ablation(&bench));
        }
        Err(e) => {
            for (id, title) in [
                ("A5", "zero-shot retrieval"),
                ("A6", "band-screening discovery"),
                ("A7", "entropy regularizer"),
                ("A8", "calibration effect"),
                ("A9", "ablation harness"),
            ] {
                report(id, title, Err(neuroalign::Error::InvalidArgument(format!("benchmark synthesis failed: {e}"))));
            }
        }
    }
    report("A10", "format round-trips", a10_formats());

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
