use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use neuroalign::blur::{gaussian_blur, ImageTensor};
use neuroalign::cli::{
    cmd_bands, cmd_blur, cmd_eval, cmd_synth, cmd_train, decode_p5, encode_p6, read_dataset, read_tensor,
    write_report, write_tensor, Globals, Manifest, OutDir, QuerySource, RunConfig,
};
use neuroalign::pipeline::{rank_retrieval, similarity_histogram, DataShape, Model, RetrievalReport};
use neuroalign::{Error, Tensor};

const TINY: &str = r#"
# tiny benchmark used by the command tests
[synth]
n_classes = 3
n_test_classes = 2
imgs_per_class = 2
trials_per_image = 2
image_size = [24, 24]
channels = 4
samples = 128
sample_rate = 128.0

[train]
steps   = 4
batch_size = 4

[encoder]
embed_dim = 8
attention_grid = [8, 8]

[blur]
saliency_scales = [2, 4]
"#;

fn globals(config: &Path) -> Globals {
    Globals {
        config: Some(config.to_path_buf()),
        ..Globals::default()
    }
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Relative path → bytes for every file below `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let config = write_config(&root, "tiny.toml", TINY);
    let data = root.join("data");
    cmd_synth(&globals(&config), &data).unwrap();
    Fixture {
        _tmp: tmp,
        root,
        config,
        data,
    }
}

#[test]
fn synth_is_reproducible_and_validates() {
    let f = fixture();
    let again = f.root.join("again");
    cmd_synth(&globals(&f.config), &again).unwrap();
    assert_eq!(tree(&f.data), tree(&again));

    let (data, manifest) = read_dataset(&f.data).unwrap();
    assert_eq!(manifest.kind, "dataset");
    assert_eq!(data.train.images.len(), 6);
    assert_eq!(data.train.samples.len(), 12);
    assert_eq!(data.test.samples.len(), 2);
    // the config is echoed verbatim, comments and spacing included
    assert_eq!(std::fs::read(f.data.join("config.toml")).unwrap(), TINY.as_bytes());

    let other = f.root.join("other");
    let g = Globals {
        seed: Some(5),
        ..globals(&f.config)
    };
    cmd_synth(&g, &other).unwrap();
    assert_ne!(
        std::fs::read(f.data.join("train/trials.caia")).unwrap(),
        std::fs::read(other.join("train/trials.caia")).unwrap()
    );
}

#[test]
fn two_class_config_lists_two_test_candidates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "two.toml",
        "[synth]\nn_classes = 2\nn_test_classes = 2\nimgs_per_class = 1\nimage_size = [16, 16]\n",
    );
    let m = cmd_synth(&globals(&cfg), &tmp.path().join("d")).unwrap();
    assert_eq!(m.meta["test_candidates"].as_array().unwrap().len(), 2);
    let (data, _) = read_dataset(&tmp.path().join("d")).unwrap();
    assert_eq!(data.test.images.len(), 2);
}

#[test]
fn existing_output_needs_force() {
    let f = fixture();
    let err = cmd_synth(&globals(&f.config), &f.data).unwrap_err();
    assert!(matches!(err, Error::OutputExists(_)));
    let before = tree(&f.data);
    let g = Globals {
        force: true,
        ..globals(&f.config)
    };
    cmd_synth(&g, &f.data).unwrap();
    assert_eq!(tree(&f.data), before);
}

#[test]
fn tampered_dataset_is_rejected() {
    let f = fixture();
    let path = f.data.join("train/labels.caia");
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    let err = cmd_train(&globals(&f.config), &f.data, &f.root.join("p"), None).unwrap_err();
    assert!(matches!(err, Error::Checksum(_)), "{err}");
}

#[test]
fn zero_steps_writes_initial_params_and_header_only() {
    let f = fixture();
    let out = f.root.join("p0");
    cmd_train(&globals(&f.config), &f.data, &out, Some(0)).unwrap();
    assert_eq!(
        std::fs::read_to_string(out.join("metrics.csv")).unwrap(),
        "step,clip_loss,bound_loss,entropy,overall,probe_top1\n"
    );
    assert_eq!(std::fs::read(out.join("config.toml")).unwrap(), TINY.as_bytes());

    let cfg = RunConfig::parse(TINY).unwrap();
    let model = Model::new(
        cfg.train.clone(),
        cfg.encoder.clone(),
        &cfg.blur,
        cfg.band_spec(128.0).unwrap(),
        DataShape {
            image: (24, 24),
            channels: 4,
            samples: 128,
            sample_rate: 128.0,
        },
    )
    .unwrap();
    let init = model.init_params().unwrap();
    let manifest = Manifest::load(&out, "params").unwrap();
    assert_eq!(manifest.files.iter().filter(|e| e.path.starts_with("params/")).count(), init.len());
    for (name, p) in init.iter() {
        let t = read_tensor(&out.join(format!("params/{name}.caia"))).unwrap();
        assert_eq!(t.shape(), p.value.shape());
        for (a, b) in t.data().iter().zip(p.value.data()) {
            assert_eq!(*a, *b as f32 as f64, "{name}");
        }
    }
}

#[test]
fn training_reruns_reproduce_metrics_exactly() {
    let f = fixture();
    let a = f.root.join("a");
    let b = f.root.join("b");
    cmd_train(&globals(&f.config), &f.data, &a, None).unwrap();
    let g4 = Globals {
        workers: 4,
        ..globals(&f.config)
    };
    cmd_train(&g4, &f.data, &b, None).unwrap();
    let csv = std::fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(csv, std::fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn eval_report_is_well_formed() {
    let f = fixture();
    let params = f.root.join("p");
    cmd_train(&globals(&f.config), &f.data, &params, None).unwrap();
    let out = f.root.join("eval");
    let report = cmd_eval(&Globals::default(), &params, &f.data, &out).unwrap();

    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    for key in ["top1", "top5", "per_class", "band_weights", "outlier_frac_before", "outlier_frac_after"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let (t1, t5) = (json["top1"].as_f64().unwrap(), json["top5"].as_f64().unwrap());
    assert!(0.0 <= t1 && t1 <= t5 && t5 <= 1.0);
    assert_eq!(t1, report.top1);

    let bands = std::fs::read_to_string(out.join("bands.csv")).unwrap();
    let mut lines = bands.lines();
    assert_eq!(lines.next(), Some("band_name,lo_hz,hi_hz,weight"));
    let total: f64 = lines.map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-6);

    let hist = std::fs::read_to_string(out.join("histogram.csv")).unwrap();
    let mut lines = hist.lines();
    assert_eq!(lines.next(), Some("bin_lo,bin_hi,count"));
    let count: usize = lines.map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(count, 12);
}

#[test]
fn eval_rejects_params_from_other_data_shapes() {
    let f = fixture();
    let params = f.root.join("p");
    cmd_train(&globals(&f.config), &f.data, &params, Some(1)).unwrap();
    let wide = write_config(&f.root, "wide.toml", &TINY.replace("channels = 4", "channels = 5"));
    let other = f.root.join("wide");
    cmd_synth(&globals(&wide), &other).unwrap();
    let err = cmd_eval(&Globals::default(), &params, &other, &f.root.join("e")).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch(_)), "{err}");
}

#[test]
fn identity_similarity_fixture_reports_perfect_top1() {
    let n = 4;
    let sim: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let truth: Vec<usize> = (0..n).collect();
    let r = rank_retrieval(&sim, &truth, &truth).unwrap();
    let report = RetrievalReport {
        top1: r.top1,
        top5: r.top5,
        per_class: r.per_class,
        band_weights: Vec::new(),
        outlier_frac_before: 0.0,
        outlier_frac_after: 0.0,
        histogram: similarity_histogram(&[1.0; 4], 40, 0.05).unwrap(),
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut dir = OutDir::create(tmp.path(), false).unwrap();
    write_report(&mut dir, &report).unwrap();
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["top1"].as_f64(), Some(1.0));
    assert_eq!(json["top5"].as_f64(), Some(1.0));
}

fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
    let data = (0..h * w * 3)
        .map(|i| ((i as u64 * 2_654_435_761 + seed * 97) % 256) as f64 / 255.0)
        .collect();
    ImageTensor::new(h, w, data).unwrap()
}

#[test]
fn constant_image_blurs_to_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("c.ppm");
    let img = ImageTensor::new(20, 30, [0.2, 0.55, 0.9].repeat(600)).unwrap();
    let bytes = encode_p6(&img);
    std::fs::write(&input, &bytes).unwrap();
    let out = tmp.path().join("out");
    cmd_blur(&Globals::default(), &input, &out, None).unwrap();
    for f in ["gaussian.ppm", "x_a.ppm", "x_b.ppm", "x_fused.ppm"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), bytes, "{f}");
    }
}

#[test]
fn full_blur_strength_gives_pure_gaussian() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", "[blur]\nw0 = 1.0\nsigma = 2.0\n");
    let input = tmp.path().join("r.ppm");
    let img = random_image(20, 26, 3);
    std::fs::write(&input, encode_p6(&img)).unwrap();
    let out = tmp.path().join("out");
    cmd_blur(&globals(&cfg), &input, &out, None).unwrap();
    let xa = std::fs::read(out.join("x_a.ppm")).unwrap();
    assert_eq!(xa, std::fs::read(out.join("gaussian.ppm")).unwrap());
    assert_eq!(xa, encode_p6(&gaussian_blur(&img, 2.0).unwrap()));
}

#[test]
fn attention_map_exports_agree_within_a_quantum() {
    let f = fixture();
    let params = f.root.join("p");
    cmd_train(&globals(&f.config), &f.data, &params, None).unwrap();
    let input = f.root.join("r.ppm");
    std::fs::write(&input, encode_p6(&random_image(24, 24, 8))).unwrap();
    let out = f.root.join("blur");
    let q = QuerySource {
        params: params.clone(),
        trial: f.data.join("test/trials.caia"),
        index: 1,
    };
    cmd_blur(&Globals::default(), &input, &out, Some(&q)).unwrap();
    let t = read_tensor(&out.join("attention.caia")).unwrap();
    let p5 = decode_p5(&std::fs::read(out.join("attention.pgm")).unwrap()).unwrap();
    assert_eq!(t.shape(), &[24, 24]);
    let spread = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - t.data().iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread > 0.0, "attention map should depend on the query");
    for (a, b) in t.data().iter().zip(p5.data()) {
        assert!((a - b).abs() <= 1.0 / 255.0);
    }
}

#[test]
fn blur_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("none.ppm");
    assert!(cmd_blur(&Globals::default(), &missing, &tmp.path().join("o"), None).is_err());
    let input = tmp.path().join("r.ppm");
    std::fs::write(&input, encode_p6(&random_image(20, 20, 1))).unwrap();
    let bad = write_config(tmp.path(), "bad.toml", "[blur]\nw_0 = 0.3\n");
    let err = cmd_blur(&globals(&bad), &input, &tmp.path().join("o"), None).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn bands_decomposition_reconstructs_the_trial() {
    let f = fixture();
    let out = f.root.join("bands");
    cmd_bands(&globals(&f.config), &f.data.join("train/trials.caia"), &out, 3).unwrap();
    let m = Manifest::load(&out, "bands").unwrap();
    assert!(m.meta_f64("reconstruction_max_abs_error").unwrap() < 1e-9);
    let bands = read_tensor(&out.join("bands.caia")).unwrap();
    assert_eq!(bands.shape(), &[5, 4, 128]);
    for name in ["low", "mid", "high"] {
        assert_eq!(read_tensor(&out.join(format!("static_{name}.caia"))).unwrap().shape(), &[4, 128]);
    }

    // a single [C, T] trial works too, and out-of-range indices do not
    let single = f.root.join("one.caia");
    write_tensor(&single, &Tensor::from_vec(&[2, 64], (0..128).map(|i| (i as f64).sin()).collect()).unwrap()).unwrap();
    cmd_bands(&globals(&f.config), &single, &f.root.join("b1"), 0).unwrap();
    assert!(cmd_bands(&globals(&f.config), &single, &f.root.join("b2"), 1).is_err());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_neuroalign"))
}

#[test]
fn binary_exit_codes() {
    let f = fixture();
    let ok = bin()
        .args(["--config", f.config.to_str().unwrap(), "train", "--steps", "1", "--data"])
        .arg(&f.data)
        .arg("--out")
        .arg(f.root.join("p"))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));

    let div = write_config(&f.root, "div.toml", &TINY.replace("steps   = 4", "steps = 4\nlr = 1e300"));
    let diverged = bin()
        .args(["--config", div.to_str().unwrap(), "train", "--data"])
        .arg(&f.data)
        .arg("--out")
        .arg(f.root.join("pd"))
        .output()
        .unwrap();
    assert_eq!(diverged.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&diverged.stderr).contains("diverged"));

    let typo = write_config(&f.root, "typo.toml", "[train]\nstpes = 3\n");
    let bad = bin()
        .args(["--config", typo.to_str().unwrap(), "synth", "--out"])
        .arg(f.root.join("x"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("stpes"));
    assert!(!f.root.join("x").exists());

    let usage = bin().arg("frobnicate").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
}
