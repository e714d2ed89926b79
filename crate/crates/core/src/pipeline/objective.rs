//! The full training objective over one batch: screen → encode EEG →
//! fuse the blur paths (EEG as query) → encode image → contrastive,
//! boundary and entropy terms, with the matching analytic backward pass.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Model, PreparedImage, GAMMA_RAW, LOGIT_SCALE, SELECTION_LOGITS};
use crate::align::{batch_stats, boundary_loss, clip_contrastive_loss, cosine_backward, cosine_similarity_matrix, overall_loss};
use crate::blur::ImageTensor;
use crate::diffcore::ParamStore;
use crate::encoders::{EegTrace, Embedding, VisualTrace, EEG_KERNEL, EEG_MIXER, EEG_PROJECTION};
use crate::error::Result;
use crate::fusion::{
    attention_backward, attention_forward, learnable_mask_backward, learnable_mask_fuse, linear_fuse, FusionMode,
    FusionTrace, KEY_PROJ, MASK_LOGIT, QUERY_PROJ,
};
use crate::spectral::{entropy_grad_logits, selection_entropy, softmax_backward, BandScreen, EEGTrial, ScreenTrace};

/// How often each optional module ran; lets ablations prove a module was
/// never touched.
#[derive(Debug, Default)]
pub struct Counters {
    fusion: AtomicU64,
    ibwave: AtomicU64,
    bound: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub fusion_calls: u64,
    pub ibwave_calls: u64,
    pub bound_calls: u64,
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            fusion_calls: self.fusion.load(Ordering::Relaxed),
            ibwave_calls: self.ibwave.load(Ordering::Relaxed),
            bound_calls: self.bound.load(Ordering::Relaxed),
        }
    }

    fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }
}

/// One (trial, stimulus) pair of a batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub trial: &'a EEGTrial,
    pub image: &'a PreparedImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub clip: f64,
    /// 0 when the boundary term is disabled.
    pub bound: f64,
    /// `H(m)`; 0 when band screening is disabled.
    pub entropy: f64,
    pub overall: f64,
    /// In-batch EEG→image top-1 accuracy.
    pub probe_top1: f64,
    /// Matched-pair similarities `s_i`.
    pub matched: Vec<f64>,
}

/// Per-step quantities shared by every sample.
pub(crate) struct StepContext {
    pub m: Vec<f64>,
    pub screen: Option<BandScreen>,
    pub temperature: f64,
    pub d_temperature_d_scale: f64,
    pub d_gamma_d_raw: Vec<f64>,
}

pub(crate) enum Fused<'a> {
    Borrowed(&'a ImageTensor),
    Attention(Box<FusionTrace>),
    Mask { mask: f64, image: ImageTensor },
    Owned(ImageTensor),
}

impl Fused<'_> {
    pub fn image(&self) -> &ImageTensor {
        match self {
            Fused::Borrowed(img) => img,
            Fused::Attention(t) => &t.fused,
            Fused::Mask { image, .. } | Fused::Owned(image) => image,
        }
    }
}

pub(crate) struct EegForward {
    pub screened: Option<(EEGTrial, ScreenTrace)>,
    pub trace: EegTrace,
}

struct SampleForward<'a> {
    eeg: EegForward,
    fused: Fused<'a>,
    visual: VisualTrace,
}

#[derive(Debug, Default)]
struct SampleGrads {
    kernel: Vec<f64>,
    mixer: Vec<f64>,
    projection: Vec<f64>,
    query_proj: Vec<f64>,
    key_proj: Vec<f64>,
    mask_logit: f64,
    d_m: Vec<f64>,
    d_gamma: Vec<f64>,
}

fn add_into(acc: &mut Vec<f64>, v: &[f64]) {
    if acc.is_empty() {
        acc.extend_from_slice(v);
    } else {
        acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    }
}

impl SampleGrads {
    fn add(&mut self, o: &SampleGrads) {
        add_into(&mut self.kernel, &o.kernel);
        add_into(&mut self.mixer, &o.mixer);
        add_into(&mut self.projection, &o.projection);
        add_into(&mut self.query_proj, &o.query_proj);
        add_into(&mut self.key_proj, &o.key_proj);
        add_into(&mut self.d_m, &o.d_m);
        add_into(&mut self.d_gamma, &o.d_gamma);
        self.mask_logit += o.mask_logit;
    }
}

/// Batch loss evaluator bound to a model and an instrumentation sink.
pub struct Objective<'m> {
    model: &'m Model,
    counters: &'m Counters,
}

impl<'m> Objective<'m> {
    pub fn new(model: &'m Model, counters: &'m Counters) -> Self {
        Self { model, counters }
    }

    pub(crate) fn context(&self, store: &ParamStore) -> Result<StepContext> {
        let (temperature, d_temperature_d_scale) = self.model.temperature(store)?;
        let (_, d_gamma_d_raw) = self.model.band_spec(store)?;
        Ok(StepContext {
            m: self.model.selection(store)?,
            screen: if self.model.train.use_ibwave {
                Some(self.model.screen(store)?)
            } else {
                None
            },
            temperature,
            d_temperature_d_scale,
            d_gamma_d_raw,
        })
    }

    pub(crate) fn encode_eeg(&self, store: &ParamStore, ctx: &StepContext, trial: &EEGTrial) -> Result<EegForward> {
        let screened = match &ctx.screen {
            Some(screen) => {
                Counters::bump(&self.counters.ibwave);
                Some(screen.forward(trial, &ctx.m)?)
            }
            None => None,
        };
        let input = screened.as_ref().map_or(trial, |(y, _)| y);
        let trace = self.model.eeg.forward(input, store)?;
        Ok(EegForward { screened, trace })
    }

    pub(crate) fn fuse<'a>(&self, store: &ParamStore, image: &'a PreparedImage, query: &[f64]) -> Result<Fused<'a>> {
        let mode = self.model.mode();
        if !matches!(mode, FusionMode::CenterOnly | FusionMode::SaliencyOnly | FusionMode::Original) {
            Counters::bump(&self.counters.fusion);
        }
        Ok(match mode {
            FusionMode::Attention => {
                let (xa, xb) = (image.saliency_path()?, image.center_path()?);
                Fused::Attention(Box::new(attention_forward(query, xa, xb, store, &self.model.fusion)?))
            }
            FusionMode::Linear => Fused::Owned(linear_fuse(image.saliency_path()?, image.center_path()?)?),
            FusionMode::LearnableMask => {
                let (image, mask) = learnable_mask_fuse(image.saliency_path()?, image.center_path()?, store)?;
                Fused::Mask { mask, image }
            }
            FusionMode::CenterOnly => Fused::Borrowed(image.center_path()?),
            FusionMode::SaliencyOnly => Fused::Borrowed(image.saliency_path()?),
            FusionMode::Original => Fused::Borrowed(image.original()?),
        })
    }

    fn forward_sample<'a>(&self, store: &ParamStore, ctx: &StepContext, item: &BatchItem<'a>) -> Result<SampleForward<'a>> {
        let eeg = self.encode_eeg(store, ctx, item.trial)?;
        let fused = self.fuse(store, item.image, &eeg.trace.embedding)?;
        let visual = self.model.visual.forward(fused.image())?;
        Ok(SampleForward { eeg, fused, visual })
    }

    fn backward_sample(
        &self,
        store: &ParamStore,
        ctx: &StepContext,
        item: &BatchItem<'_>,
        fwd: &SampleForward<'_>,
        d_z: &[f64],
        d_y: &[f64],
    ) -> Result<SampleGrads> {
        let mut grads = SampleGrads::default();
        let mut dz = d_z.to_vec();
        match &fwd.fused {
            Fused::Attention(trace) => {
                let d_img = self.model.visual.backward(&fwd.visual, d_y)?;
                let (xa, xb) = (item.image.saliency_path()?, item.image.center_path()?);
                let g = attention_backward(&fwd.eeg.trace.embedding, xa, xb, trace, &d_img, store)?;
                if !self.model.train.frozen_query {
                    dz.iter_mut().zip(&g.query).for_each(|(a, b)| *a += b);
                }
                grads.query_proj = g.query_proj;
                grads.key_proj = g.key_proj;
            }
            Fused::Mask { mask, .. } => {
                let d_img = self.model.visual.backward(&fwd.visual, d_y)?;
                let (xa, xb) = (item.image.saliency_path()?, item.image.center_path()?);
                grads.mask_logit = learnable_mask_backward(xa, xb, *mask, &d_img).2;
            }
            Fused::Borrowed(_) | Fused::Owned(_) => {}
        }
        let input = fwd.eeg.screened.as_ref().map_or(item.trial, |(y, _)| y);
        let eg = self.model.eeg.backward(input, store, &fwd.eeg.trace, &dz)?;
        if let (Some(screen), Some((_, trace))) = (&ctx.screen, &fwd.eeg.screened) {
            let (d_m, d_gamma) = screen.backward(trace, &ctx.m, &eg.input);
            grads.d_m = d_m;
            grads.d_gamma = d_gamma;
        }
        grads.kernel = eg.kernel;
        grads.mixer = eg.mixer;
        grads.projection = eg.projection;
        Ok(grads)
    }

    fn run(&self, store: &ParamStore, items: &[BatchItem<'_>], with_grad: bool) -> Result<(BatchLoss, Option<Vec<(String, Vec<f64>)>>)> {
        let cfg = &self.model.train;
        let ctx = self.context(store)?;
        let forwards: Vec<SampleForward<'_>> = items
            .par_iter()
            .map(|it| self.forward_sample(store, &ctx, it))
            .collect::<Result<_>>()?;
        let z: Vec<Embedding> = forwards.iter().map(|f| f.eeg.trace.embedding.clone()).collect();
        let y: Vec<Embedding> = forwards.iter().map(|f| f.visual.embedding.clone()).collect();
        let sim = cosine_similarity_matrix(&z, &y)?;
        let b = sim.size;
        let clip = clip_contrastive_loss(&sim, ctx.temperature)?;
        let matched = sim.diagonal();
        let mut d_sim = clip.d_sim.clone();

        let bound = if cfg.use_bound {
            Counters::bump(&self.counters.bound);
            let stats = batch_stats(&matched, cfg.alpha)?;
            let bl = boundary_loss(&matched, &stats, cfg.detach_stats)?;
            for (i, g) in bl.d_s.iter().enumerate() {
                d_sim[i * b + i] += cfg.w1 * g;
            }
            bl.loss
        } else {
            0.0
        };
        let entropy = if cfg.use_ibwave { selection_entropy(&ctx.m) } else { 0.0 };
        let w1 = if cfg.use_bound { cfg.w1 } else { 0.0 };
        let w2 = if cfg.use_ibwave { cfg.w2 } else { 0.0 };
        let overall = overall_loss(clip.loss, bound, entropy, w1, w2);
        let hits = (0..b)
            .filter(|&i| {
                // lowest index wins ties
                let best = (0..b).fold(0, |best, j| if sim.at(i, j) > sim.at(i, best) { j } else { best });
                best == i
            })
            .count();
        let loss = BatchLoss {
            clip: clip.loss,
            bound,
            entropy,
            overall,
            probe_top1: hits as f64 / b as f64,
            matched,
        };
        if !with_grad {
            return Ok((loss, None));
        }

        let (d_z, d_y) = cosine_backward(&z, &y, &d_sim)?;
        let per_sample: Vec<SampleGrads> = (0..b)
            .into_par_iter()
            .map(|i| self.backward_sample(store, &ctx, &items[i], &forwards[i], &d_z[i], &d_y[i]))
            .collect::<Result<_>>()?;
        let mut total = SampleGrads::default();
        for g in &per_sample {
            total.add(g);
        }

        let mut out = vec![
            (EEG_KERNEL.to_string(), total.kernel),
            (EEG_MIXER.to_string(), total.mixer),
            (EEG_PROJECTION.to_string(), total.projection),
            (LOGIT_SCALE.to_string(), vec![clip.d_temperature * ctx.d_temperature_d_scale]),
        ];
        match self.model.mode() {
            FusionMode::Attention => {
                out.push((QUERY_PROJ.to_string(), total.query_proj));
                out.push((KEY_PROJ.to_string(), total.key_proj));
            }
            FusionMode::LearnableMask => out.push((MASK_LOGIT.to_string(), vec![total.mask_logit])),
            _ => {}
        }
        if cfg.use_ibwave {
            let mut d_w = softmax_backward(&ctx.m, &total.d_m, cfg.tau);
            for (a, e) in d_w.iter_mut().zip(entropy_grad_logits(&ctx.m, cfg.tau)) {
                *a += cfg.w2 * e;
            }
            let d_raw = total.d_gamma.iter().zip(&ctx.d_gamma_d_raw).map(|(g, d)| g * d).collect();
            out.push((SELECTION_LOGITS.to_string(), d_w));
            out.push((GAMMA_RAW.to_string(), d_raw));
        }
        Ok((loss, Some(out)))
    }

    /// Loss only.
    pub fn loss(&self, store: &ParamStore, items: &[BatchItem<'_>]) -> Result<BatchLoss> {
        Ok(self.run(store, items, false)?.0)
    }

    /// Loss plus gradients accumulated into `store`. Per-sample gradients
    /// are summed in batch order, so the result does not depend on the
    /// number of worker threads.
    pub fn loss_and_grad(&self, store: &mut ParamStore, items: &[BatchItem<'_>]) -> Result<BatchLoss> {
        let (loss, grads) = self.run(store, items, true)?;
        for (name, g) in grads.unwrap_or_default() {
            store.accumulate_grad_slice(&name, &g)?;
        }
        Ok(loss)
    }
}
