use serde::{Deserialize, Serialize};

use super::{GaussianBlur, ImageTensor, WeightMap};
use crate::error::{Error, Result};

/// Blur strength and radial decay shared by both paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurConfig {
    /// Gaussian standard deviation in pixels.
    pub sigma: f64,
    /// Global blur strength in `[0, 1]`; 1 means fully blurred.
    pub w0: f64,
    /// Radial decay rate of the center-bias weight.
    pub g: f64,
}

impl Default for BlurConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            w0: 0.5,
            g: 3.0,
        }
    }
}

impl BlurConfig {
    /// Default σ is 10 px at 224×224 and scales with `min(H, W)`.
    pub fn scaled_sigma(height: usize, width: usize) -> f64 {
        10.0 * height.min(width) as f64 / 224.0
    }

    pub fn kernel_radius(&self) -> usize {
        (3.0 * self.sigma).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.w0) {
            return Err(Error::InvalidArgument(format!("w0 must lie in [0,1], got {}", self.w0)));
        }
        if !(self.g > 0.0) {
            return Err(Error::InvalidArgument(format!("g must be > 0, got {}", self.g)));
        }
        Ok(())
    }
}

/// `out = w ⊙ X + (1 − w) ⊙ blurred`, with `w` shared across channels.
fn blend(img: &ImageTensor, blurred: &ImageTensor, weights: &WeightMap) -> Result<ImageTensor> {
    let data = img
        .data()
        .chunks_exact(3)
        .zip(blurred.data().chunks_exact(3))
        .zip(weights.data())
        .flat_map(|((x, b), &w)| (0..3).map(move |c| w * x[c] + (1.0 - w) * b[c]))
        .collect();
    ImageTensor::new(img.height(), img.width(), data)
}

/// Gradient of a blend path with respect to the source image, for fixed
/// weights: `w ⊙ g + 𝒢ᵀ((1 − w) ⊙ g)`.
pub fn blend_backward(grad_out: &[f64], weights: &WeightMap, blur: &GaussianBlur) -> Vec<f64> {
    let through_blur: Vec<f64> = grad_out
        .chunks_exact(3)
        .zip(weights.data())
        .flat_map(|(g, &w)| (0..3).map(move |c| (1.0 - w) * g[c]))
        .collect();
    let mut grad = blur.backward(&through_blur);
    for ((gi, go), &w) in grad
        .chunks_exact_mut(3)
        .zip(grad_out.chunks_exact(3))
        .zip(weights.data())
    {
        for c in 0..3 {
            gi[c] += w * go[c];
        }
    }
    grad
}

/// Saliency-guided path: `w_S = (1 − w₀)·saliency`, returns `(X_A, w_S)`.
pub fn saliency_blur(
    img: &ImageTensor,
    saliency: &WeightMap,
    cfg: &BlurConfig,
) -> Result<(ImageTensor, WeightMap)> {
    cfg.validate()?;
    img.ensure_same_dims(saliency.dims(), "saliency map")?;
    if saliency.data().iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::InvalidArgument("saliency values must lie in [0,1]".into()));
    }
    let ws = WeightMap::new(
        img.height(),
        img.width(),
        saliency.data().iter().map(|s| (1.0 - cfg.w0) * s).collect(),
    )?;
    let blurred = GaussianBlur::new(img.height(), img.width(), cfg.sigma)?.apply(img)?;
    Ok((blend(img, &blurred, &ws)?, ws))
}

/// `w_R(i,j) = (1 − w₀)·exp(−g·d(i,j))`, with `d` the pixel-center distance
/// to the image center divided by the center-to-corner distance.
pub fn center_weight_map(height: usize, width: usize, cfg: &BlurConfig) -> WeightMap {
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let corner = (cy * cy + cx * cx).sqrt();
    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let d = if corner > 0.0 {
                (dy * dy + dx * dx).sqrt() / corner
            } else {
                0.0
            };
            data.push((1.0 - cfg.w0) * (-cfg.g * d).exp());
        }
    }
    WeightMap::new(height, width, data).expect("length matches by construction")
}

/// Center-biased radial path, returns `(X_B, w_R)`.
pub fn center_blur(img: &ImageTensor, cfg: &BlurConfig) -> Result<(ImageTensor, WeightMap)> {
    cfg.validate()?;
    let wr = center_weight_map(img.height(), img.width(), cfg);
    let blurred = GaussianBlur::new(img.height(), img.width(), cfg.sigma)?.apply(img)?;
    Ok((blend(img, &blurred, &wr)?, wr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blur::{compute_saliency, gaussian_blur};
    use crate::diffcore::{fd_gradient_check, ParamStore};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(h, w, (0..h * w * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn cfg(sigma: f64, w0: f64, g: f64) -> BlurConfig {
        BlurConfig { sigma, w0, g }
    }

    #[test]
    fn full_saliency_blends_half() {
        let img = random_image(10, 12, 1);
        let sal = WeightMap::filled(10, 12, 1.0);
        let c = cfg(1.5, 0.5, 3.0);
        let (xa, ws) = saliency_blur(&img, &sal, &c).unwrap();
        assert!(ws.data().iter().all(|&w| w == 0.5));
        let g = gaussian_blur(&img, 1.5).unwrap();
        for ((a, x), b) in xa.data().iter().zip(img.data()).zip(g.data()) {
            assert!((a - (x + b) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_saliency_is_fully_blurred() {
        let img = random_image(10, 12, 2);
        let (xa, _) = saliency_blur(&img, &WeightMap::filled(10, 12, 0.0), &cfg(1.5, 0.3, 3.0)).unwrap();
        assert_eq!(xa, gaussian_blur(&img, 1.5).unwrap());
    }

    #[test]
    fn w0_one_is_fully_blurred() {
        let img = random_image(10, 12, 3);
        let sal = compute_saliency(&img, &[2]).unwrap();
        let (xa, _) = saliency_blur(&img, &sal, &cfg(1.5, 1.0, 3.0)).unwrap();
        assert_eq!(xa, gaussian_blur(&img, 1.5).unwrap());
    }

    #[test]
    fn saliency_dimension_mismatch() {
        let img = random_image(10, 12, 4);
        let err = saliency_blur(&img, &WeightMap::filled(12, 10, 0.5), &cfg(1.0, 0.5, 3.0));
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn center_and_corner_weights() {
        let c = cfg(1.0, 0.5, 3.0);
        let m = center_weight_map(11, 11, &c);
        assert!((m.at(5, 5) - 0.5).abs() < 1e-15);
        let corner = 0.5 * (-3.0f64).exp();
        assert!((corner - 0.024893534).abs() < 1e-9);
        for (y, x) in [(0, 0), (0, 10), (10, 0), (10, 10)] {
            assert!((m.at(y, x) - corner).abs() < 1e-15);
        }
    }

    #[test]
    fn center_map_flip_symmetric() {
        let m = center_weight_map(8, 12, &cfg(1.0, 0.4, 2.0));
        for y in 0..8 {
            for x in 0..12 {
                assert!((m.at(y, x) - m.at(7 - y, x)).abs() < 1e-15);
                assert!((m.at(y, x) - m.at(y, 11 - x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tiny_decay_gives_uniform_blend() {
        let m = center_weight_map(9, 9, &cfg(1.0, 0.25, 1e-12));
        assert!(m.data().iter().all(|w| (w - 0.75).abs() < 1e-11));
    }

    #[test]
    fn center_blur_constant_unchanged() {
        let img = ImageTensor::filled(15, 15, 0.42);
        let (xb, _) = center_blur(&img, &cfg(2.0, 0.5, 3.0)).unwrap();
        assert!(xb.data().iter().all(|v| (v - 0.42).abs() < 1e-14));
    }

    #[test]
    fn center_blur_is_convex_combination() {
        let img = random_image(14, 10, 5);
        let c = cfg(1.3, 0.5, 3.0);
        let (xb, _) = center_blur(&img, &c).unwrap();
        let g = gaussian_blur(&img, 1.3).unwrap();
        for ((o, x), b) in xb.data().iter().zip(img.data()).zip(g.data()) {
            assert!(*o >= x.min(*b) - 1e-15 && *o <= x.max(*b) + 1e-15);
        }
    }

    fn blend_gradcheck(use_saliency: bool) {
        let (h, w) = (9, 8);
        let img = random_image(h, w, 21);
        let c = cfg(1.1, 0.4, 3.0);
        let sal = compute_saliency(&img, &[1, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let probe: Vec<f64> = (0..h * w * 3).map(|_| rng.random::<f64>() - 0.5).collect();

        let run = |data: &[f64]| -> Result<(f64, WeightMap)> {
            let im = ImageTensor::new(h, w, data.to_vec())?;
            let (out, weights) = if use_saliency {
                saliency_blur(&im, &sal, &c)?
            } else {
                center_blur(&im, &c)?
            };
            Ok((out.data().iter().zip(&probe).map(|(a, b)| a * b).sum(), weights))
        };

        let mut store = ParamStore::new();
        store
            .insert("image", Tensor::from_vec(&[h, w, 3], img.data().to_vec()).unwrap(), true)
            .unwrap();
        let (_, weights) = run(img.data()).unwrap();
        let blur = GaussianBlur::new(h, w, c.sigma).unwrap();
        let grad = blend_backward(&probe, &weights, &blur);
        store.accumulate_grad_slice("image", &grad).unwrap();

        let report = fd_gradient_check(
            |s| Ok(run(s.value("image")?.data())?.0),
            &store,
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn saliency_path_gradient() {
        blend_gradcheck(true);
    }

    #[test]
    fn center_path_gradient() {
        blend_gradcheck(false);
    }
}
