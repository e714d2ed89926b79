use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Model, PreparedImage};
use super::objective::{Counters, Fused, Objective};
use crate::blur::{ImageTensor, WeightMap};
use crate::spectral::EEGTrial;
use super::synth::Split;
use crate::align::batch_stats;
use crate::diffcore::ParamStore;
use crate::encoders::Embedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHit {
    pub class: usize,
    /// 1-based rank of the true candidate.
    pub rank: usize,
    pub top1: bool,
    pub top5: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub top1: f64,
    pub top5: f64,
    pub per_class: Vec<ClassHit>,
}

impl Retrieval {
    /// Fraction of queries whose true candidate ranks within the first `k`.
    pub fn top_k(&self, k: usize) -> f64 {
        if self.per_class.is_empty() {
            return 0.0;
        }
        self.per_class.iter().filter(|h| h.rank <= k).count() as f64 / self.per_class.len() as f64
    }
}

/// Rank candidates by similarity, highest first. Ties go to the lower
/// candidate index, so the true candidate's rank is
/// `1 + #{better} + #{equal with lower index}`.
///
/// `sim[q][c]` scores query `q` against candidate `c`; `truth[q]` is the
/// matching candidate and `classes[q]` the label reported per query.
pub fn rank_retrieval(sim: &[Vec<f64>], truth: &[usize], classes: &[usize]) -> Result<Retrieval> {
    if sim.is_empty() || sim[0].is_empty() {
        return Err(Error::InvalidArgument("empty candidate set".into()));
    }
    if truth.len() != sim.len() || classes.len() != sim.len() {
        return Err(Error::DimensionMismatch("one true candidate and class per query".into()));
    }
    let n_cand = sim[0].len();
    let mut per_class = Vec::with_capacity(sim.len());
    for ((row, &t), &class) in sim.iter().zip(truth).zip(classes) {
        if row.len() != n_cand || t >= n_cand {
            return Err(Error::DimensionMismatch("ragged similarity table or bad truth index".into()));
        }
        let target = row[t];
        let ahead = row
            .iter()
            .enumerate()
            .filter(|&(c, &s)| s > target || (s == target && c < t))
            .count();
        let rank = ahead + 1;
        per_class.push(ClassHit {
            class,
            rank,
            top1: rank <= 1,
            top5: rank <= 5,
        });
    }
    let n = per_class.len() as f64;
    Ok(Retrieval {
        top1: per_class.iter().filter(|h| h.top1).count() as f64 / n,
        top5: per_class.iter().filter(|h| h.top5).count() as f64 / n,
        per_class,
    })
}

/// Retrieval from fixed embeddings: cosine similarity of each query
/// against every candidate; query `i`'s true candidate is `truth[i]`.
pub fn evaluate_retrieval(z: &[Embedding], y: &[Embedding], truth: &[usize]) -> Result<Retrieval> {
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty candidate set".into()));
    }
    let unit = |v: &Embedding| -> Result<Vec<f64>> { Ok(crate::align::normalize(v, "retrieval embedding")?.0) };
    let zu = z.iter().map(unit).collect::<Result<Vec<_>>>()?;
    let yu = y.iter().map(unit).collect::<Result<Vec<_>>>()?;
    let sim: Vec<Vec<f64>> = zu
        .iter()
        .map(|a| yu.iter().map(|b| a.iter().zip(b).map(|(p, q)| p * q).sum()).collect())
        .collect();
    rank_retrieval(&sim, truth, truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHistogram {
    pub bins: Vec<HistogramBin>,
    pub lower: f64,
    pub upper: f64,
    pub outlier_fraction: f64,
}

/// Equal-width bins over `[−1, 1]` (the last bin is closed) plus the
/// calibration interval and the share of samples outside it.
pub fn similarity_histogram(s: &[f64], bins: usize, alpha: f64) -> Result<SimilarityHistogram> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    let width = 2.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in s {
        let k = (((v.clamp(-1.0, 1.0) + 1.0) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    let stats = batch_stats(s, alpha)?;
    Ok(SimilarityHistogram {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(k, count)| HistogramBin {
                bin_lo: -1.0 + k as f64 * width,
                bin_hi: -1.0 + (k + 1) as f64 * width,
                count,
            })
            .collect(),
        lower: stats.lower,
        upper: stats.upper,
        outlier_fraction: stats.outlier_fraction(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandWeight {
    pub band_name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub top1: f64,
    pub top5: f64,
    pub per_class: Vec<ClassHit>,
    pub band_weights: Vec<BandWeight>,
    /// Share of training matched pairs outside the calibration interval
    /// under the initial parameters.
    pub outlier_frac_before: f64,
    /// The same share under the trained parameters.
    pub outlier_frac_after: f64,
    /// Training matched-pair similarities under the trained parameters.
    pub histogram: SimilarityHistogram,
}

pub const HISTOGRAM_BINS: usize = 40;

/// EEG embeddings of every trial in a split.
pub fn embed_trials(model: &Model, store: &ParamStore, split: &Split) -> Result<Vec<Embedding>> {
    let counters = Counters::default();
    let obj = Objective::new(model, &counters);
    let ctx = obj.context(store)?;
    split
        .samples
        .par_iter()
        .map(|s| Ok(obj.encode_eeg(store, &ctx, &s.trial)?.trace.embedding))
        .collect()
}

/// Similarity of every trial to its own stimulus, fused with that trial's query.
pub fn matched_similarities(model: &Model, store: &ParamStore, split: &Split, prepared: &[PreparedImage]) -> Result<Vec<f64>> {
    let counters = Counters::default();
    let obj = Objective::new(model, &counters);
    let z = embed_trials(model, store, split)?;
    split
        .samples
        .par_iter()
        .zip(z.par_iter())
        .map(|(s, zi)| {
            let fused = obj.fuse(store, &prepared[s.image], zi)?;
            let y = model.visual.encode(fused.image())?;
            Ok(zi.iter().zip(&y).map(|(a, b)| a * b).sum())
        })
        .collect()
}

/// `sim[q][c]`: trial `q` against candidate image `c`, where each candidate
/// is fused using trial `q`'s embedding as the query.
pub fn similarity_table(model: &Model, store: &ParamStore, split: &Split, prepared: &[PreparedImage]) -> Result<Vec<Vec<f64>>> {
    let counters = Counters::default();
    let obj = Objective::new(model, &counters);
    let z = embed_trials(model, store, split)?;
    z.par_iter()
        .map(|zi| {
            prepared
                .iter()
                .map(|img| {
                    let fused = obj.fuse(store, img, zi)?;
                    let y = model.visual.encode(fused.image())?;
                    Ok(zi.iter().zip(&y).map(|(a, b)| a * b).sum())
                })
                .collect()
        })
        .collect()
}

/// The fused stimulus produced with `trial`'s embedding as the query, and
/// the blend weight on the saliency path when the mode has one.
pub fn fuse_with_trial(
    model: &Model,
    store: &ParamStore,
    image: &PreparedImage,
    trial: &EEGTrial,
) -> Result<(ImageTensor, Option<WeightMap>)> {
    let counters = Counters::default();
    let obj = Objective::new(model, &counters);
    let ctx = obj.context(store)?;
    let z = obj.encode_eeg(store, &ctx, trial)?.trace.embedding;
    let fused = obj.fuse(store, image, &z)?;
    let (h, w) = fused.image().dims();
    Ok(match fused {
        Fused::Attention(t) => (t.fused, Some(t.attention)),
        Fused::Mask { mask, image } => (image, Some(WeightMap::filled(h, w, mask))),
        Fused::Owned(image) if model.mode() == crate::fusion::FusionMode::Linear => {
            (image, Some(WeightMap::filled(h, w, 0.5)))
        }
        other => (other.image().clone(), None),
    })
}

pub fn band_weights(model: &Model, store: &ParamStore) -> Result<Vec<BandWeight>> {
    let m = model.selection(store)?;
    let (spec, _) = model.band_spec(store)?;
    let edges = spec.effective_edges(model.shape.sample_rate)?;
    Ok(m.iter()
        .enumerate()
        .map(|(i, &weight)| BandWeight {
            band_name: spec.band_name(i),
            lo_hz: edges[i],
            hi_hz: edges[i + 1],
            weight,
        })
        .collect())
}

/// Zero-shot retrieval on the test split plus calibration diagnostics on
/// the training split. `initial` is the parameter state before training.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    initial: &ParamStore,
    train: (&Split, &[PreparedImage]),
    test: (&Split, &[PreparedImage]),
) -> Result<RetrievalReport> {
    let (test_split, test_prepared) = test;
    let sim = similarity_table(model, store, test_split, test_prepared)?;
    let truth: Vec<usize> = test_split.samples.iter().map(|s| s.image).collect();
    let classes: Vec<usize> = test_split.samples.iter().map(|s| s.class).collect();
    let retrieval = rank_retrieval(&sim, &truth, &classes)?;

    let (train_split, train_prepared) = train;
    let alpha = model.train.alpha;
    let before = matched_similarities(model, initial, train_split, train_prepared)?;
    let after = matched_similarities(model, store, train_split, train_prepared)?;
    Ok(RetrievalReport {
        top1: retrieval.top1,
        top5: retrieval.top5,
        per_class: retrieval.per_class,
        band_weights: band_weights(model, store)?,
        outlier_frac_before: batch_stats(&before, alpha)?.outlier_fraction(),
        outlier_frac_after: batch_stats(&after, alpha)?.outlier_fraction(),
        histogram: similarity_histogram(&after, HISTOGRAM_BINS, alpha)?,
    })
}
