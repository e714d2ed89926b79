//! Multi-scale center-surround color contrast, used where a learned
//! salient-object detector would otherwise supply the map.

use super::{ImageTensor, WeightMap};
use crate::error::{Error, Result};
use crate::resample::{AxisOp, Separable};

pub const DEFAULT_SALIENCY_SCALES: [usize; 3] = [2, 4, 8];

/// Per pixel: mean over `scales` of the RGB distance between the pixel and
/// its `(2r+1)²` reflect-padded neighborhood mean, then min-max normalized.
/// A map with no contrast at all is returned as all zeros.
pub fn compute_saliency(img: &ImageTensor, scales: &[usize]) -> Result<WeightMap> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("saliency needs at least one scale".into()));
    }
    let (h, w) = img.dims();
    let limit = h.min(w) as f64 / 2.0;
    for &r in scales {
        if r == 0 || r as f64 >= limit {
            return Err(Error::InvalidArgument(format!(
                "saliency scale {r} must be in 1..{limit} for a {h}x{w} image"
            )));
        }
    }

    let mut acc = vec![0.0; h * w];
    for &r in scales {
        let kernel = vec![1.0 / (2 * r + 1) as f64; 2 * r + 1];
        let op = Separable::new(AxisOp::convolution(h, &kernel), AxisOp::convolution(w, &kernel));
        let local_mean = op.apply(img.data(), 3);
        for (p, a) in acc.iter_mut().enumerate() {
            let d2: f64 = (0..3)
                .map(|c| {
                    let diff = img.data()[p * 3 + c] - local_mean[p * 3 + c];
                    diff * diff
                })
                .sum();
            *a += d2.sqrt();
        }
    }
    let n = scales.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);

    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    // Residual contrast below this is rounding noise from the box filter.
    if span <= 1e-12 {
        return WeightMap::new(h, w, vec![0.0; h * w]);
    }
    WeightMap::new(h, w, acc.into_iter().map(|a| (a - lo) / span).collect())
}
