use crate::error::{Error, Result};

/// `C × T` EEG trial, channel-major, with its sampling rate in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct EEGTrial {
    channels: usize,
    samples: usize,
    sample_rate: f64,
    data: Vec<f64>,
}

impl EEGTrial {
    pub const MIN_SAMPLES: usize = 8;

    pub fn new(channels: usize, samples: usize, sample_rate: f64, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("trial needs at least one channel".into()));
        }
        if samples < Self::MIN_SAMPLES {
            return Err(Error::InvalidArgument(format!(
                "trial needs at least {} samples, got {samples}",
                Self::MIN_SAMPLES
            )));
        }
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("sample rate must be > 0, got {sample_rate}")));
        }
        if data.len() != channels * samples {
            return Err(Error::ShapeMismatch {
                context: "trial data".into(),
                expected: vec![channels, samples],
                found: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trial data".into()));
        }
        Ok(Self {
            channels,
            samples,
            sample_rate,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Same geometry, new samples.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.channels, self.samples, self.sample_rate, data)
    }

    /// Sample-wise mean of repeated trials of one stimulus.
    pub fn average(trials: &[EEGTrial]) -> Result<Self> {
        let first = trials
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot average zero trials".into()))?;
        let mut acc = vec![0.0; first.data.len()];
        for t in trials {
            if t.channels != first.channels || t.samples != first.samples {
                return Err(Error::DimensionMismatch("trials being averaged differ in shape".into()));
            }
            for (a, v) in acc.iter_mut().zip(&t.data) {
                *a += v;
            }
        }
        let n = trials.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        first.with_data(acc)
    }
}
