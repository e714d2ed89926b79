use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Model, PreparedImage};
use super::objective::{BatchItem, CounterSnapshot, Counters, Objective};
use super::synth::Split;
use crate::diffcore::{adam_step, AdamConfig, AdamState, ParamStore};
use crate::error::{Error, Result};

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub clip_loss: f64,
    pub bound_loss: f64,
    pub entropy: f64,
    pub overall: f64,
    pub probe_top1: f64,
}

pub const METRICS_HEADER: &str = "step,clip_loss,bound_loss,entropy,overall,probe_top1";

impl MetricsRow {
    /// CSV line without trailing newline; floats use the shortest
    /// representation that round-trips.
    pub fn csv(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?}",
            self.step, self.clip_loss, self.bound_loss, self.entropy, self.overall, self.probe_top1
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub store: ParamStore,
    pub metrics: Vec<MetricsRow>,
    pub counters: CounterSnapshot,
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Deterministic batch sampler: distinct images per batch, one of each
/// image's trials chosen at random.
struct Sampler {
    rng: ChaCha8Rng,
    by_image: Vec<Vec<usize>>,
}

impl Sampler {
    fn new(split: &Split, seed: u64) -> Self {
        let mut by_image = vec![Vec::new(); split.images.len()];
        for (i, s) in split.samples.iter().enumerate() {
            by_image[s.image].push(i);
        }
        // separate stream from parameter initialization
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self { rng, by_image }
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        let images: Vec<usize> = self.by_image.iter().enumerate().filter(|(_, v)| !v.is_empty()).map(|(i, _)| i).collect();
        let picked: Vec<usize> = if batch >= images.len() {
            images
        } else {
            index::sample(&mut self.rng, images.len(), batch).into_iter().map(|k| images[k]).collect()
        };
        picked
            .into_iter()
            .map(|img| {
                let trials = &self.by_image[img];
                if trials.len() == 1 {
                    trials[0]
                } else {
                    trials[self.rng.random_range(0..trials.len())]
                }
            })
            .collect()
    }
}

/// Train from the model's seeded initialization.
pub fn train(model: &Model, split: &Split, prepared: &[PreparedImage], workers: usize) -> Result<TrainOutcome> {
    train_from(model, model.init_params()?, split, prepared, workers)
}

/// Adam on the batch objective for `model.train.steps` steps. Aborts with
/// [`Error::Diverged`] as soon as the loss or a parameter is non-finite, or
/// an update makes the forward pass degenerate.
pub fn train_from(
    model: &Model,
    mut store: ParamStore,
    split: &Split,
    prepared: &[PreparedImage],
    workers: usize,
) -> Result<TrainOutcome> {
    let cfg = &model.train;
    if split.samples.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if prepared.len() != split.images.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} prepared images for {} stimuli",
            prepared.len(),
            split.images.len()
        )));
    }
    let counters = Counters::default();
    let objective = Objective::new(model, &counters);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut sampler = Sampler::new(split, cfg.seed);
    let pool = thread_pool(workers)?;
    let mut metrics = Vec::with_capacity(cfg.steps);

    pool.install(|| -> Result<()> {
        for step in 0..cfg.steps {
            let picked = sampler.next(cfg.batch_size);
            let items: Vec<BatchItem<'_>> = picked
                .iter()
                .map(|&i| {
                    let s = &split.samples[i];
                    BatchItem {
                        trial: &s.trial,
                        image: &prepared[s.image],
                    }
                })
                .collect();
            let loss = match objective.loss_and_grad(&mut store, &items) {
                // after an update, a degenerate forward pass means the
                // parameters have blown up rather than bad input
                Err(Error::ZeroNorm(_) | Error::NonFinite(_)) if step > 0 => {
                    return Err(Error::Diverged { step, loss: f64::NAN });
                }
                other => other?,
            };
            if !loss.overall.is_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: loss.overall,
                });
            }
            metrics.push(MetricsRow {
                step,
                clip_loss: loss.clip,
                bound_loss: loss.bound,
                entropy: loss.entropy,
                overall: loss.overall,
                probe_top1: loss.probe_top1,
            });
            adam_step(&mut store, &mut adam);
            if store.iter().any(|(_, p)| p.value.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged { step, loss: f64::NAN });
            }
        }
        Ok(())
    })?;

    Ok(TrainOutcome {
        store,
        metrics,
        counters: counters.snapshot(),
    })
}
