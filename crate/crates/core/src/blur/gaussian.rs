use super::ImageTensor;
use crate::error::{Error, Result};
use crate::resample::{AxisOp, Separable};

/// Normalized 1-D Gaussian truncated at radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Precomputed separable Gaussian for a fixed image size.
#[derive(Debug, Clone)]
pub struct GaussianBlur {
    op: Separable,
}

impl GaussianBlur {
    pub fn new(height: usize, width: usize, sigma: f64) -> Result<Self> {
        let k = gaussian_kernel(sigma)?;
        Ok(Self {
            op: Separable::new(AxisOp::convolution(height, &k), AxisOp::convolution(width, &k)),
        })
    }

    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        let (h, w) = self.op.in_dims();
        img.ensure_same_dims((h, w), "gaussian blur")?;
        ImageTensor::new(h, w, self.op.apply(img.data(), 3))
    }

    /// Adjoint of the blur applied to a gradient buffer.
    pub fn backward(&self, grad: &[f64]) -> Vec<f64> {
        self.op.adjoint(grad, 3)
    }
}

/// `𝒢_σ(X)`: per-channel separable Gaussian with reflect padding.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    GaussianBlur::new(img.height(), img.width(), sigma)?.apply(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resample::reflect_index;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(h, w, (0..h * w * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    /// Dense 2-D convolution with the outer-product kernel; independent of
    /// the separable tap tables.
    fn dense_blur(img: &ImageTensor, sigma: f64) -> Vec<f64> {
        let r = (3.0 * sigma).ceil() as isize;
        let mut k2 = vec![];
        let mut total = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let w = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
                k2.push((dy, dx, w));
                total += w;
            }
        }
        let (h, w) = img.dims();
        let mut out = vec![0.0; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                for &(dy, dx, kw) in &k2 {
                    let sy = reflect_index(y as isize + dy, h);
                    let sx = reflect_index(x as isize + dx, w);
                    let p = img.pixel(sy, sx);
                    for c in 0..3 {
                        out[(y * w + x) * 3 + c] += kw / total * p[c];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn kernel_sums_to_one_and_radius() {
        for sigma in [0.3, 1.0, 1.5, 5.0, 10.0] {
            let k = gaussian_kernel(sigma).unwrap();
            assert_eq!(k.len(), 2 * (3.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_positive_sigma_rejected() {
        assert!(gaussian_kernel(0.0).is_err());
        assert!(gaussian_kernel(-1.0).is_err());
        assert!(gaussian_blur(&ImageTensor::filled(4, 4, 0.5), f64::NAN).is_err());
    }

    #[test]
    fn constant_image_unchanged() {
        let img = ImageTensor::filled(12, 9, 0.37);
        let out = gaussian_blur(&img, 2.0).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-14));
    }

    #[test]
    fn impulse_reproduces_kernel() {
        let sigma = 1.2;
        let k = gaussian_kernel(sigma).unwrap();
        let r = k.len() / 2;
        let n = 31;
        let mut img = ImageTensor::filled(n, n, 0.0);
        let c = n / 2;
        img.data_mut()[(c * n + c) * 3 + 1] = 1.0;
        let out = gaussian_blur(&img, sigma).unwrap();
        for y in 0..n {
            for x in 0..n {
                let expected = if y.abs_diff(c) <= r && x.abs_diff(c) <= r {
                    k[y + r - c] * k[x + r - c]
                } else {
                    0.0
                };
                assert!((out.pixel(y, x)[1] - expected).abs() < 1e-15);
                assert_eq!(out.pixel(y, x)[0], 0.0);
            }
        }
    }

    #[test]
    fn mean_preserved_on_small_image() {
        let img = random_image(9, 9, 7);
        let out = gaussian_blur(&img, 1.5).unwrap();
        assert!((out.mean() - img.mean()).abs() < 1e-10);
        // dense oracle agrees as well
        let dense = dense_blur(&img, 1.5);
        let dense_mean = dense.iter().sum::<f64>() / dense.len() as f64;
        assert!((dense_mean - img.mean()).abs() < 1e-10);
    }

    #[test]
    fn separable_matches_dense() {
        let img = random_image(16, 16, 11);
        for sigma in [0.8, 1.5, 3.0] {
            let sep = gaussian_blur(&img, sigma).unwrap();
            let dense = dense_blur(&img, sigma);
            let err = sep
                .data()
                .iter()
                .zip(&dense)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "sigma={sigma} err={err}");
        }
    }
}
