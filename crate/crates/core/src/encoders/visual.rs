use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Embedding;
use crate::align::normalize;
use crate::blur::ImageTensor;
use crate::error::{Error, Result};
use crate::resample::{AxisOp, Separable};

/// Side of the pooled grid the visual encoder works on.
pub const VISUAL_GRID: usize = 16;
const FEATURES: usize = VISUAL_GRID * VISUAL_GRID * 3;

/// Fixed random projection of a pooled, centered image. Rows of the
/// projection are orthonormal, so the encoder is an isometry onto its row
/// space. Never trained.
#[derive(Debug, Clone)]
pub struct FrozenVisualEncoder {
    seed: u64,
    embed_dim: usize,
    projection: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VisualTrace {
    dims: (usize, usize),
    norm: f64,
    pub embedding: Embedding,
}

impl FrozenVisualEncoder {
    pub fn new(seed: u64, embed_dim: usize) -> Result<Self> {
        if embed_dim == 0 || embed_dim > FEATURES {
            return Err(Error::InvalidArgument(format!(
                "visual embedding dimension must be in 1..={FEATURES}, got {embed_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = (0..embed_dim)
            .map(|_| (0..FEATURES).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        // modified Gram–Schmidt, twice for numerical orthogonality
        for _ in 0..2 {
            for i in 0..embed_dim {
                let (done, rest) = rows.split_at_mut(i);
                let row = &mut rest[0];
                for prev in done.iter() {
                    let dot: f64 = row.iter().zip(prev).map(|(a, b)| a * b).sum();
                    row.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot * b);
                }
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        Ok(Self {
            seed,
            embed_dim,
            projection: rows.concat(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Row-major `d × 768` projection.
    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    fn pool(h: usize, w: usize) -> Result<Separable> {
        if h < VISUAL_GRID || w < VISUAL_GRID {
            return Err(Error::DimensionMismatch(format!(
                "visual encoder needs at least {VISUAL_GRID}x{VISUAL_GRID} pixels, got {h}x{w}"
            )));
        }
        Ok(Separable::new(AxisOp::area(h, VISUAL_GRID), AxisOp::area(w, VISUAL_GRID)))
    }

    pub fn encode(&self, img: &ImageTensor) -> Result<Embedding> {
        Ok(self.forward(img)?.embedding)
    }

    pub fn forward(&self, img: &ImageTensor) -> Result<VisualTrace> {
        let (h, w) = img.dims();
        let pooled = Self::pool(h, w)?.apply(img.data(), 3);
        let raw: Vec<f64> = self
            .projection
            .chunks_exact(FEATURES)
            .map(|row| row.iter().zip(&pooled).map(|(p, v)| p * (v - 0.5)).sum())
            .collect();
        let (embedding, norm) = normalize(&raw, "visual embedding")?;
        Ok(VisualTrace {
            dims: (h, w),
            norm,
            embedding,
        })
    }

    /// Gradient with respect to the input pixels (interleaved RGB).
    pub fn backward(&self, trace: &VisualTrace, d_embedding: &[f64]) -> Result<Vec<f64>> {
        let z = &trace.embedding;
        let dot: f64 = d_embedding.iter().zip(z).map(|(a, b)| a * b).sum();
        let mut d_pooled = vec![0.0; FEATURES];
        for (row, (g, u)) in self.projection.chunks_exact(FEATURES).zip(d_embedding.iter().zip(z)) {
            let d_raw = (g - dot * u) / trace.norm;
            d_pooled.iter_mut().zip(row).for_each(|(d, p)| *d += d_raw * p);
        }
        Ok(Self::pool(trace.dims.0, trace.dims.1)?.adjoint(&d_pooled, 3))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{fd_gradient_check, ParamStore};
    use crate::tensor::Tensor;

    #[test]
    fn rows_are_orthonormal() {
        let enc = FrozenVisualEncoder::new(3, 64).unwrap();
        let p = enc.projection();
        let mut worst: f64 = 0.0;
        for i in 0..64 {
            for j in 0..64 {
                let g: f64 = (0..FEATURES).map(|k| p[i * FEATURES + k] * p[j * FEATURES + k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn seed_determines_projection() {
        let a = FrozenVisualEncoder::new(11, 8).unwrap();
        let b = FrozenVisualEncoder::new(11, 8).unwrap();
        let c = FrozenVisualEncoder::new(12, 8).unwrap();
        assert_eq!(a.projection(), b.projection());
        assert_ne!(a.projection(), c.projection());
    }

    #[test]
    fn tiny_images_rejected() {
        let enc = FrozenVisualEncoder::new(0, 8).unwrap();
        let img = ImageTensor::filled(15, 40, 0.3);
        assert!(matches!(enc.encode(&img), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn uniform_mid_gray_is_degenerate() {
        let enc = FrozenVisualEncoder::new(0, 8).unwrap();
        let img = ImageTensor::filled(32, 32, 0.5);
        assert!(matches!(enc.encode(&img), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let enc = FrozenVisualEncoder::new(5, 6).unwrap();
        let (h, w) = (18, 20);
        let data: Vec<f64> = (0..h * w * 3).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect();
        let img = ImageTensor::new(h, w, data.clone()).unwrap();
        let probe = [0.4, -0.2, 0.9, 0.1, -0.6, 0.3];
        let mut store = ParamStore::new();
        store.insert("img", Tensor::from_vec(&[h, w, 3], data).unwrap(), true).unwrap();
        let trace = enc.forward(&img).unwrap();
        let g = enc.backward(&trace, &probe).unwrap();
        store.accumulate_grad_slice("img", &g).unwrap();
        let f = |s: &ParamStore| -> Result<f64> {
            let im = ImageTensor::new(h, w, s.value("img")?.data().to_vec())?;
            let z = enc.encode(&im)?;
            Ok(z.iter().zip(&probe).map(|(a, b)| a * b).sum())
        };
        let report = fd_gradient_check(f, &store, 1e-4, 1e-4).unwrap();
        assert!(report.pass, "{report:?}");
    }
}
