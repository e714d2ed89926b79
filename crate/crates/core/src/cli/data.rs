//! Dataset and parameter directories on disk.
//!
//! A dataset holds, per split (`train/`, `test/`): `images.caia`
//! `[N, H, W, 3]`, `image_class.caia` `[N]`, `trials.caia` `[M, C, T]` and
//! `labels.caia` `[M, 3]` with columns image index, class, outlier flag.
//! A parameter directory holds one `params/<name>.caia` per parameter.

use std::path::Path;

use super::manifest::{Manifest, OutDir};
use super::tensorfile::read_tensor;
use crate::blur::ImageTensor;
use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::pipeline::{Dataset, Model, Sample, Split};
use crate::spectral::EEGTrial;
use crate::tensor::Tensor;

fn write_split(out: &mut OutDir, name: &str, split: &Split) -> Result<()> {
    let (h, w) = split
        .images
        .first()
        .map(ImageTensor::dims)
        .ok_or_else(|| Error::InvalidArgument(format!("{name} split has no images")))?;
    let images: Vec<f64> = split.images.iter().flat_map(|im| im.data().iter().copied()).collect();
    out.write_tensor(&format!("{name}/images.caia"), &Tensor::from_vec(&[split.images.len(), h, w, 3], images)?)?;
    let classes = split.image_class.iter().map(|&c| c as f64).collect();
    out.write_tensor(&format!("{name}/image_class.caia"), &Tensor::from_vec(&[split.image_class.len()], classes)?)?;

    let first = &split
        .samples
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("{name} split has no trials")))?
        .trial;
    let (c, t) = (first.channels(), first.samples());
    let trials: Vec<f64> = split.samples.iter().flat_map(|s| s.trial.data().iter().copied()).collect();
    out.write_tensor(&format!("{name}/trials.caia"), &Tensor::from_vec(&[split.samples.len(), c, t], trials)?)?;
    let labels = split
        .samples
        .iter()
        .flat_map(|s| [s.image as f64, s.class as f64, if s.outlier { 1.0 } else { 0.0 }])
        .collect();
    out.write_tensor(&format!("{name}/labels.caia"), &Tensor::from_vec(&[split.samples.len(), 3], labels)?)?;
    Ok(())
}

pub fn write_dataset(out: &mut OutDir, data: &Dataset) -> Result<()> {
    write_split(out, "train", &data.train)?;
    write_split(out, "test", &data.test)
}

fn index(v: f64, bound: usize, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && (v as usize) < bound {
        Ok(v as usize)
    } else {
        Err(Error::Format(format!("bad {what} label {v}")))
    }
}

fn read_split(dir: &Path, name: &str, sample_rate: f64) -> Result<Split> {
    let images = read_tensor(&dir.join(name).join("images.caia"))?;
    let image_class = read_tensor(&dir.join(name).join("image_class.caia"))?;
    let trials = read_tensor(&dir.join(name).join("trials.caia"))?;
    let labels = read_tensor(&dir.join(name).join("labels.caia"))?;
    let (is, ts, ls) = (images.shape(), trials.shape(), labels.shape());
    if is.len() != 4 || is[3] != 3 || ts.len() != 3 || ls != [ts[0], 3] || image_class.shape() != [is[0]] {
        return Err(Error::Format(format!("inconsistent {name} split tensors")));
    }
    let (n, h, w) = (is[0], is[1], is[2]);
    let (c, t) = (ts[1], ts[2]);
    let images = images
        .data()
        .chunks_exact(h * w * 3)
        .map(|px| ImageTensor::new(h, w, px.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let image_class = image_class
        .data()
        .iter()
        .map(|&v| index(v, usize::MAX, "class"))
        .collect::<Result<Vec<_>>>()?;
    let samples = trials
        .data()
        .chunks_exact(c * t)
        .zip(labels.data().chunks_exact(3))
        .map(|(x, l)| {
            Ok(Sample {
                image: index(l[0], n, "image")?,
                class: index(l[1], usize::MAX, "class")?,
                trial: EEGTrial::new(c, t, sample_rate, x.to_vec())?,
                outlier: l[2] != 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Split {
        images,
        image_class,
        samples,
    })
}

/// Validate the manifest, then load both splits.
pub fn read_dataset(dir: &Path) -> Result<(Dataset, Manifest)> {
    let manifest = Manifest::load(dir, "dataset")?;
    let sample_rate = manifest.meta_f64("sample_rate")?;
    let dataset = Dataset {
        train: read_split(dir, "train", sample_rate)?,
        test: read_split(dir, "test", sample_rate)?,
    };
    Ok((dataset, manifest))
}

pub fn param_path(name: &str) -> String {
    format!("params/{name}.caia")
}

pub fn write_params(out: &mut OutDir, store: &ParamStore) -> Result<()> {
    for (name, p) in store.iter() {
        out.write_tensor(&param_path(name), &p.value)?;
    }
    Ok(())
}

/// Load a parameter directory into the layout `model` expects. Any
/// missing, extra or reshaped parameter is a dimension mismatch.
pub fn read_params(dir: &Path, manifest: &Manifest, model: &Model) -> Result<ParamStore> {
    let mut store = model.init_params()?;
    let stored = manifest.files.iter().filter(|e| e.path.starts_with("params/")).count();
    if stored != store.len() {
        return Err(Error::DimensionMismatch(format!(
            "params directory has {stored} tensors, the model needs {}",
            store.len()
        )));
    }
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let rel = param_path(&name);
        if manifest.entry(&rel).is_none() {
            return Err(Error::DimensionMismatch(format!("params directory lacks `{name}`")));
        }
        let t = read_tensor(&dir.join(&rel))?;
        let expected = store.value(&name)?.shape().to_vec();
        if t.shape() != &expected[..] {
            return Err(Error::DimensionMismatch(format!(
                "`{name}` has shape {:?}, the data implies {expected:?}",
                t.shape()
            )));
        }
        store.set_value(&name, t)?;
    }
    Ok(store)
}
