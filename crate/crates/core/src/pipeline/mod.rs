//! Synthetic benchmark, end-to-end training and zero-shot evaluation.

mod eval;
mod model;
mod objective;
mod synth;
mod train;

pub use eval::{
    band_weights, embed_trials, evaluate, fuse_with_trial, evaluate_retrieval, matched_similarities, rank_retrieval,
    similarity_histogram, similarity_table, BandWeight, ClassHit, HistogramBin, Retrieval, RetrievalReport,
    SimilarityHistogram, HISTOGRAM_BINS,
};
pub use model::{
    BlurSettings, DataShape, EncoderSettings, Model, PreparedImage, TrainConfig, GAMMA_RAW, LOGIT_SCALE,
    SELECTION_LOGITS,
};
pub use objective::{BatchItem, BatchLoss, CounterSnapshot, Counters, Objective};
pub use synth::{synth_dataset, Dataset, Sample, Split, SynthConfig};
pub use train::{thread_pool, train, train_from, MetricsRow, TrainOutcome, METRICS_HEADER};
