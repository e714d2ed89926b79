use crate::error::{Error, Result};

/// Batch statistics of the matched-pair similarities and the resulting
/// confidence interval `[s̄ − zσ, s̄ + zσ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub alpha: f64,
    /// Upper `α/2` quantile of the standard normal.
    pub z: f64,
    pub lower: f64,
    pub upper: f64,
    /// `true` for samples strictly outside the interval.
    pub outlier_mask: Vec<bool>,
}

impl CalibrationStats {
    pub fn outlier_count(&self) -> usize {
        self.outlier_mask.iter().filter(|&&o| o).count()
    }

    pub fn outlier_fraction(&self) -> f64 {
        self.outlier_count() as f64 / self.outlier_mask.len() as f64
    }
}

/// `Φ(x)` for the standard normal.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// `z` with `P(N(0,1) > z) = p`. The three common two-sided levels come from
/// a table; other values are found by bisection on the CDF.
pub fn normal_upper_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("tail probability must be in (0,1), got {p}")));
    }
    const TABLE: [(f64, f64); 3] = [
        (0.05, 1.644_853_626_951_472_2),
        (0.025, 1.959_963_984_540_054),
        (0.005, 2.575_829_303_548_900_4),
    ];
    if let Some(&(_, z)) = TABLE.iter().find(|(q, _)| (q - p).abs() < 1e-15) {
        return Ok(z);
    }
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 - normal_cdf(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn batch_stats(s: &[f64], alpha: f64) -> Result<CalibrationStats> {
    if s.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 similarities, got {}", s.len())));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0,1), got {alpha}")));
    }
    let b = s.len() as f64;
    let mean = s.iter().sum::<f64>() / b;
    let std = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b).sqrt();
    let z = normal_upper_quantile(alpha / 2.0)?;
    let lower = mean - z * std;
    let upper = mean + z * std;
    let outlier_mask = s.iter().map(|&v| v < lower || v > upper).collect();
    Ok(CalibrationStats {
        mean,
        std,
        alpha,
        z,
        lower,
        upper,
        outlier_mask,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLoss {
    pub loss: f64,
    /// `∂loss/∂s_i`.
    pub d_s: Vec<f64>,
}

/// Mean over outliers of the two hinge distances to the interval; 0 when
/// there are no outliers.
///
/// With `detach_stats` the mean, deviation and quantile are batch constants
/// and only the outlying samples receive gradient. Otherwise the gradient
/// also flows through `s̄` and `σ`.
pub fn boundary_loss(s: &[f64], stats: &CalibrationStats, detach_stats: bool) -> Result<BoundaryLoss> {
    if s.len() != stats.outlier_mask.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} similarities vs stats over {}",
            s.len(),
            stats.outlier_mask.len()
        )));
    }
    let b = s.len();
    let mut d_s = vec![0.0; b];
    let count = stats.outlier_count();
    if count == 0 {
        return Ok(BoundaryLoss { loss: 0.0, d_s });
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    // Σ over outliers of ∂ℓ/∂s̄ and ∂ℓ/∂σ, for the non-detached path
    let (mut d_mean, mut d_std) = (0.0, 0.0);
    for (i, &si) in s.iter().enumerate() {
        if !stats.outlier_mask[i] {
            continue;
        }
        let left = (stats.lower - si).max(0.0);
        let right = (si - stats.upper).max(0.0);
        loss += inv * (left + right);
        if left > 0.0 {
            d_s[i] -= inv;
            d_mean += inv;
            d_std -= inv * stats.z;
        }
        if right > 0.0 {
            d_s[i] += inv;
            d_mean -= inv;
            d_std -= inv * stats.z;
        }
    }
    if !detach_stats {
        let bf = b as f64;
        for (k, &sk) in s.iter().enumerate() {
            let dstd_dsk = if stats.std > 0.0 {
                (sk - stats.mean) / (bf * stats.std)
            } else {
                0.0
            };
            d_s[k] += d_mean / bf + d_std * dstd_dsk;
        }
    }
    Ok(BoundaryLoss { loss, d_s })
}
