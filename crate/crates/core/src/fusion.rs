//! EEG-query attention fusion of the two blur paths, plus the simple
//! reference blends used as ablation baselines.
//!
//! Attention is evaluated on a coarse grid: each cell carries an 8-feature
//! vector `[rgb(X_A), rgb(X_B), x, y]`, keys are a linear map of those
//! features, the query is a linear map of the EEG embedding, and the
//! centered scores pass through a sigmoid before bilinear upsampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blur::{ImageTensor, WeightMap};
use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::resample::{AxisOp, Separable};
use crate::tensor::Tensor;

pub const QUERY_PROJ: &str = "fusion.query_proj";
pub const KEY_PROJ: &str = "fusion.key_proj";
pub const MASK_LOGIT: &str = "fusion.mask_logit";

/// Number of per-cell key features.
pub const KEY_FEATURES: usize = 8;

/// Per-pixel attention weights, each strictly inside `(0, 1)`.
pub type AttentionMap = WeightMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Attention,
    /// Fixed 0.5 blend of the two paths.
    Linear,
    /// One global trainable scalar mask `sigmoid(fusion.mask_logit)`.
    LearnableMask,
    CenterOnly,
    SaliencyOnly,
    /// The unblurred input image.
    Original,
}

impl FusionMode {
    pub const ALL: [FusionMode; 6] = [
        FusionMode::Attention,
        FusionMode::Linear,
        FusionMode::LearnableMask,
        FusionMode::CenterOnly,
        FusionMode::SaliencyOnly,
        FusionMode::Original,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Attention => "attention",
            FusionMode::Linear => "linear",
            FusionMode::LearnableMask => "learnable_mask",
            FusionMode::CenterOnly => "center_only",
            FusionMode::SaliencyOnly => "saliency_only",
            FusionMode::Original => "original",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown fusion mode `{s}`")))
    }

    /// Whether the mode consumes either blur path.
    pub fn uses_blur(self) -> bool {
        self != FusionMode::Original
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub grid: (usize, usize),
    pub attention_dim: usize,
    pub embed_dim: usize,
}

impl FusionParams {
    pub fn new(embed_dim: usize) -> Self {
        Self {
            grid: (32, 32),
            attention_dim: 16,
            embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.0 == 0 || self.grid.1 == 0 || self.attention_dim == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument(format!("invalid fusion parameters {self:?}")));
        }
        Ok(())
    }

    /// The grid actually used for an `h × w` image (never finer than the image).
    pub fn effective_grid(&self, h: usize, w: usize) -> (usize, usize) {
        (self.grid.0.min(h), self.grid.1.min(w))
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.validate()?;
        let da = self.attention_dim;
        let mut gauss = |rows: usize, cols: usize| -> Result<Tensor> {
            let scale = 1.0 / (cols as f64).sqrt();
            Tensor::from_vec(
                &[rows, cols],
                (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect(),
            )
        };
        store.insert(QUERY_PROJ, gauss(da, self.embed_dim)?, true)?;
        store.insert(KEY_PROJ, gauss(da, KEY_FEATURES)?, true)?;
        Ok(())
    }
}

/// Register the scalar logit used by [`FusionMode::LearnableMask`],
/// initialized to an even blend.
pub fn init_mask_logit(store: &mut ParamStore) -> Result<()> {
    store.insert(MASK_LOGIT, Tensor::scalar(0.0), true)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_pair(xa: &ImageTensor, xb: &ImageTensor) -> Result<()> {
    if xa.dims() != xb.dims() {
        return Err(Error::DimensionMismatch(format!(
            "fusion inputs differ: {:?} vs {:?}",
            xa.dims(),
            xb.dims()
        )));
    }
    Ok(())
}

fn pool_op(h: usize, w: usize, grid: (usize, usize)) -> Separable {
    Separable::new(AxisOp::area(h, grid.0), AxisOp::area(w, grid.1))
}

fn upsample_op(h: usize, w: usize, grid: (usize, usize)) -> Separable {
    Separable::new(AxisOp::bilinear(grid.0, h), AxisOp::bilinear(grid.1, w))
}

#[inline]
fn norm_coord(i: usize, n: usize) -> f64 {
    if n > 1 {
        i as f64 / (n - 1) as f64
    } else {
        0.5
    }
}

/// Per-cell features, `cells × 8`, row-major over the grid.
pub fn cell_features(xa: &ImageTensor, xb: &ImageTensor, grid: (usize, usize)) -> Result<Vec<f64>> {
    check_pair(xa, xb)?;
    let (h, w) = xa.dims();
    let pool = pool_op(h, w, grid);
    let pa = pool.apply(xa.data(), 3);
    let pb = pool.apply(xb.data(), 3);
    let (gh, gw) = grid;
    let mut f = Vec::with_capacity(gh * gw * KEY_FEATURES);
    for y in 0..gh {
        for x in 0..gw {
            let j = y * gw + x;
            f.extend_from_slice(&pa[j * 3..j * 3 + 3]);
            f.extend_from_slice(&pb[j * 3..j * 3 + 3]);
            f.push(norm_coord(x, gw));
            f.push(norm_coord(y, gh));
        }
    }
    Ok(f)
}

/// Key matrix, `d_a × cells`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyMatrix {
    pub dim: usize,
    pub cells: usize,
    pub data: Vec<f64>,
}

impl KeyMatrix {
    #[inline]
    pub fn at(&self, a: usize, j: usize) -> f64 {
        self.data[a * self.cells + j]
    }
}

fn keys_from_features(features: &[f64], key_proj: &Tensor) -> Result<KeyMatrix> {
    let shape = key_proj.shape();
    if shape.len() != 2 || shape[1] != KEY_FEATURES {
        return Err(Error::ShapeMismatch {
            context: KEY_PROJ.into(),
            expected: vec![shape.first().copied().unwrap_or(0), KEY_FEATURES],
            found: shape.to_vec(),
        });
    }
    let da = shape[0];
    let cells = features.len() / KEY_FEATURES;
    let mut data = vec![0.0; da * cells];
    for a in 0..da {
        let wk = &key_proj.data()[a * KEY_FEATURES..(a + 1) * KEY_FEATURES];
        for j in 0..cells {
            let fj = &features[j * KEY_FEATURES..(j + 1) * KEY_FEATURES];
            data[a * cells + j] = wk.iter().zip(fj).map(|(p, q)| p * q).sum();
        }
    }
    Ok(KeyMatrix { dim: da, cells, data })
}

pub fn pixel_keys(xa: &ImageTensor, xb: &ImageTensor, store: &ParamStore, params: &FusionParams) -> Result<KeyMatrix> {
    let (h, w) = xa.dims();
    let features = cell_features(xa, xb, params.effective_grid(h, w))?;
    keys_from_features(&features, store.value(KEY_PROJ)?)
}

fn project_query(q: &[f64], query_proj: &Tensor) -> Result<Vec<f64>> {
    let shape = query_proj.shape();
    if shape.len() != 2 || shape[1] != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "query of length {} against projection {:?}",
            q.len(),
            shape
        )));
    }
    Ok(query_proj
        .data()
        .chunks_exact(q.len())
        .map(|row| row.iter().zip(q).map(|(a, b)| a * b).sum())
        .collect())
}

/// `S = (W_q q)ᵀ K`, one score per grid cell.
pub fn attention_scores(q: &[f64], keys: &KeyMatrix, store: &ParamStore) -> Result<Vec<f64>> {
    let query = project_query(q, store.value(QUERY_PROJ)?)?;
    scores_from(&query, keys)
}

fn scores_from(query: &[f64], keys: &KeyMatrix) -> Result<Vec<f64>> {
    if query.len() != keys.dim {
        return Err(Error::DimensionMismatch(format!(
            "query dimension {} vs key dimension {}",
            query.len(),
            keys.dim
        )));
    }
    let mut s = vec![0.0; keys.cells];
    for (a, qa) in query.iter().enumerate() {
        let row = &keys.data[a * keys.cells..(a + 1) * keys.cells];
        s.iter_mut().zip(row).for_each(|(sj, k)| *sj += qa * k);
    }
    Ok(s)
}

/// Grid attention `sigmoid(S − mean S)`.
pub fn grid_attention(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty score row".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention scores".into()));
    }
    // mean taken relative to the first score so a constant row centers to exactly zero
    let s0 = scores[0];
    let mean = s0 + scores.iter().map(|s| s - s0).sum::<f64>() / scores.len() as f64;
    Ok(scores.iter().map(|s| sigmoid(s - mean)).collect())
}

/// `A ⊙ X_A + (1 − A) ⊙ X_B` with a per-pixel map broadcast over channels.
pub fn blend_with_map(xa: &ImageTensor, xb: &ImageTensor, a: &WeightMap) -> Result<ImageTensor> {
    check_pair(xa, xb)?;
    if a.dims() != xa.dims() {
        return Err(Error::DimensionMismatch(format!(
            "attention map {:?} vs image {:?}",
            a.dims(),
            xa.dims()
        )));
    }
    let (h, w) = xa.dims();
    let mut out = Vec::with_capacity(h * w * 3);
    for (p, &ap) in a.data().iter().enumerate() {
        for c in 0..3 {
            let i = p * 3 + c;
            out.push(ap * xa.data()[i] + (1.0 - ap) * xb.data()[i]);
        }
    }
    ImageTensor::new(h, w, out)
}

/// Fuse the two paths from grid scores.
pub fn fuse(xa: &ImageTensor, xb: &ImageTensor, scores: &[f64], grid: (usize, usize)) -> Result<(ImageTensor, AttentionMap)> {
    check_pair(xa, xb)?;
    if scores.len() != grid.0 * grid.1 {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for a {}x{} grid",
            scores.len(),
            grid.0,
            grid.1
        )));
    }
    let (h, w) = xa.dims();
    let ag = grid_attention(scores)?;
    let a = WeightMap::new(h, w, upsample_op(h, w, grid).apply(&ag, 1))?;
    let fused = blend_with_map(xa, xb, &a)?;
    Ok((fused, a))
}

/// Everything the attention backward pass needs.
#[derive(Debug, Clone)]
pub struct FusionTrace {
    grid: (usize, usize),
    features: Vec<f64>,
    keys: KeyMatrix,
    query: Vec<f64>,
    grid_attention: Vec<f64>,
    pub scores: Vec<f64>,
    pub attention: AttentionMap,
    pub fused: ImageTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub query: Vec<f64>,
    pub query_proj: Vec<f64>,
    pub key_proj: Vec<f64>,
    pub xa: Vec<f64>,
    pub xb: Vec<f64>,
}

/// Full attention fusion: keys, scores, sigmoid map, blend.
pub fn attention_forward(
    q: &[f64],
    xa: &ImageTensor,
    xb: &ImageTensor,
    store: &ParamStore,
    params: &FusionParams,
) -> Result<FusionTrace> {
    check_pair(xa, xb)?;
    let (h, w) = xa.dims();
    let grid = params.effective_grid(h, w);
    let features = cell_features(xa, xb, grid)?;
    let keys = keys_from_features(&features, store.value(KEY_PROJ)?)?;
    let query = project_query(q, store.value(QUERY_PROJ)?)?;
    let scores = scores_from(&query, &keys)?;
    let (fused, attention) = fuse(xa, xb, &scores, grid)?;
    let grid_attention = grid_attention(&scores)?;
    Ok(FusionTrace {
        grid,
        features,
        keys,
        query,
        grid_attention,
        scores,
        attention,
        fused,
    })
}

/// Gradients of a scalar loss through [`attention_forward`], given
/// `∂L/∂X_fused`.
pub fn attention_backward(
    q: &[f64],
    xa: &ImageTensor,
    xb: &ImageTensor,
    trace: &FusionTrace,
    grad_fused: &[f64],
    store: &ParamStore,
) -> Result<FusionGrads> {
    let (h, w) = xa.dims();
    let (mut d_xa, mut d_xb, d_a) = blend_map_backward(xa, xb, &trace.attention, grad_fused);

    let grid = trace.grid;
    let d_ag = upsample_op(h, w, grid).adjoint(&d_a, 1);
    let d_t: Vec<f64> = d_ag
        .iter()
        .zip(&trace.grid_attention)
        .map(|(g, a)| g * a * (1.0 - a))
        .collect();
    let mean = d_t.iter().sum::<f64>() / d_t.len() as f64;
    let d_s: Vec<f64> = d_t.iter().map(|v| v - mean).collect();

    let keys = &trace.keys;
    let (da, cells) = (keys.dim, keys.cells);
    let d_query: Vec<f64> = (0..da)
        .map(|a| {
            keys.data[a * cells..(a + 1) * cells]
                .iter()
                .zip(&d_s)
                .map(|(k, s)| k * s)
                .sum()
        })
        .collect();

    let wq = store.value(QUERY_PROJ)?.data();
    let de = q.len();
    let mut d_query_proj = vec![0.0; da * de];
    let mut d_q = vec![0.0; de];
    for a in 0..da {
        for e in 0..de {
            d_query_proj[a * de + e] = d_query[a] * q[e];
            d_q[e] += wq[a * de + e] * d_query[a];
        }
    }

    // dK[a, j] = dS_j · Q_a
    let wk = store.value(KEY_PROJ)?.data();
    let mut d_key_proj = vec![0.0; da * KEY_FEATURES];
    let mut d_feat = vec![0.0; cells * KEY_FEATURES];
    for j in 0..cells {
        let fj = &trace.features[j * KEY_FEATURES..(j + 1) * KEY_FEATURES];
        let dfj = &mut d_feat[j * KEY_FEATURES..(j + 1) * KEY_FEATURES];
        for a in 0..da {
            let dk = d_s[j] * trace.query[a];
            for f in 0..KEY_FEATURES {
                d_key_proj[a * KEY_FEATURES + f] += dk * fj[f];
                dfj[f] += wk[a * KEY_FEATURES + f] * dk;
            }
        }
    }
    let mut d_pa = vec![0.0; cells * 3];
    let mut d_pb = vec![0.0; cells * 3];
    for j in 0..cells {
        d_pa[j * 3..j * 3 + 3].copy_from_slice(&d_feat[j * KEY_FEATURES..j * KEY_FEATURES + 3]);
        d_pb[j * 3..j * 3 + 3].copy_from_slice(&d_feat[j * KEY_FEATURES + 3..j * KEY_FEATURES + 6]);
    }
    let pool = pool_op(h, w, grid);
    d_xa.iter_mut().zip(pool.adjoint(&d_pa, 3)).for_each(|(d, g)| *d += g);
    d_xb.iter_mut().zip(pool.adjoint(&d_pb, 3)).for_each(|(d, g)| *d += g);

    Ok(FusionGrads {
        query: d_q,
        query_proj: d_query_proj,
        key_proj: d_key_proj,
        xa: d_xa,
        xb: d_xb,
    })
}

/// Backward of [`blend_with_map`]: returns `(∂X_A, ∂X_B, ∂A)`.
pub fn blend_map_backward(xa: &ImageTensor, xb: &ImageTensor, a: &WeightMap, grad: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = a.data().len();
    let mut d_xa = vec![0.0; n * 3];
    let mut d_xb = vec![0.0; n * 3];
    let mut d_a = vec![0.0; n];
    for (p, &ap) in a.data().iter().enumerate() {
        let mut acc = 0.0;
        for c in 0..3 {
            let i = p * 3 + c;
            d_xa[i] = ap * grad[i];
            d_xb[i] = (1.0 - ap) * grad[i];
            acc += grad[i] * (xa.data()[i] - xb.data()[i]);
        }
        d_a[p] = acc;
    }
    (d_xa, d_xb, d_a)
}

/// Fixed even blend.
pub fn linear_fuse(xa: &ImageTensor, xb: &ImageTensor) -> Result<ImageTensor> {
    let (h, w) = xa.dims();
    blend_with_map(xa, xb, &WeightMap::filled(h, w, 0.5))
}

/// Global scalar mask `sigmoid(logit)`; returns the fused image and the mask value.
pub fn learnable_mask_fuse(xa: &ImageTensor, xb: &ImageTensor, store: &ParamStore) -> Result<(ImageTensor, f64)> {
    let m = sigmoid(store.value(MASK_LOGIT)?.data()[0]);
    let (h, w) = xa.dims();
    Ok((blend_with_map(xa, xb, &WeightMap::filled(h, w, m))?, m))
}

/// Backward of [`learnable_mask_fuse`]: `(∂X_A, ∂X_B, ∂logit)`.
pub fn learnable_mask_backward(xa: &ImageTensor, xb: &ImageTensor, mask: f64, grad: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let (h, w) = xa.dims();
    let (d_xa, d_xb, d_a) = blend_map_backward(xa, xb, &WeightMap::filled(h, w, mask), grad);
    let d_logit = d_a.iter().sum::<f64>() * mask * (1.0 - mask);
    (d_xa, d_xb, d_logit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::fd_gradient_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(h, w, (0..h * w * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn setup(grid: (usize, usize)) -> (FusionParams, ParamStore) {
        let mut p = FusionParams::new(4);
        p.grid = grid;
        p.attention_dim = 3;
        let mut store = ParamStore::new();
        p.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (p, store)
    }

    #[test]
    fn constant_scores_give_even_blend() {
        let (xa, xb) = (image(8, 10, 1), image(8, 10, 2));
        let (fused, a) = fuse(&xa, &xb, &vec![3.7; 16], (4, 4)).unwrap();
        assert!(a.data().iter().all(|v| *v == 0.5));
        for i in 0..fused.data().len() {
            assert!((fused.data()[i] - 0.5 * (xa.data()[i] + xb.data()[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_paths_pass_through() {
        let xa = image(8, 8, 3);
        let s: Vec<f64> = (0..16).map(|i| i as f64 * 0.7 - 3.0).collect();
        let (fused, _) = fuse(&xa, &xa, &s, (4, 4)).unwrap();
        assert!(fused.data().iter().zip(xa.data()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn hot_cell_selects_first_path() {
        // full-resolution grid so the hot cell is exactly one pixel
        let (xa, xb) = (ImageTensor::filled(4, 4, 1.0), ImageTensor::filled(4, 4, 0.0));
        let mut s = vec![-10.0; 16];
        s[5] = 10.0;
        let mean = s.iter().sum::<f64>() / 16.0;
        let (fused, a) = fuse(&xa, &xb, &s, (4, 4)).unwrap();
        let expect = 1.0 / (1.0 + (-(10.0 - mean)).exp());
        assert!((a.at(1, 1) - expect).abs() < 1e-12);
        assert!(fused.pixel(1, 1)[0] > 0.999);
        let cold = 1.0 / (1.0 + (-(-10.0 - mean)).exp());
        assert!((fused.pixel(3, 3)[0] - cold).abs() < 1e-12);
    }

    #[test]
    fn zero_query_gives_zero_scores() {
        let (p, store) = setup((4, 4));
        let keys = pixel_keys(&image(8, 8, 1), &image(8, 8, 2), &store, &p).unwrap();
        let s = attention_scores(&[0.0; 4], &keys, &store).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_key_projection_gives_zero_keys() {
        let (p, mut store) = setup((4, 4));
        store.value_mut(KEY_PROJ).unwrap().fill(0.0);
        let keys = pixel_keys(&image(8, 8, 1), &image(8, 8, 2), &store, &p).unwrap();
        assert!(keys.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_images_vary_only_by_coordinates() {
        let (p, store) = setup((4, 4));
        let c = ImageTensor::filled(8, 8, 0.3);
        let keys = pixel_keys(&c, &c, &store, &p).unwrap();
        let wk = store.value(KEY_PROJ).unwrap();
        for a in 0..3 {
            let color: f64 = (0..6).map(|f| wk.at2(a, f) * 0.3).sum();
            for y in 0..4 {
                for x in 0..4 {
                    let expect = color + wk.at2(a, 6) * x as f64 / 3.0 + wk.at2(a, 7) * y as f64 / 3.0;
                    assert!((keys.at(a, y * 4 + x) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn full_resolution_grid_is_per_pixel() {
        let (h, w) = (5, 6);
        let (p, store) = setup((h, w));
        let (xa, xb) = (image(h, w, 7), image(h, w, 8));
        let keys = pixel_keys(&xa, &xb, &store, &p).unwrap();
        let wk = store.value(KEY_PROJ).unwrap();
        for y in 0..h {
            for x in 0..w {
                let mut f = Vec::new();
                f.extend_from_slice(&xa.pixel(y, x));
                f.extend_from_slice(&xb.pixel(y, x));
                f.push(x as f64 / (w - 1) as f64);
                f.push(y as f64 / (h - 1) as f64);
                for a in 0..3 {
                    let k: f64 = (0..8).map(|i| wk.at2(a, i) * f[i]).sum();
                    assert!((keys.at(a, y * w + x) - k).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn query_scaling_scales_scores() {
        let (p, store) = setup((4, 4));
        let keys = pixel_keys(&image(8, 8, 1), &image(8, 8, 2), &store, &p).unwrap();
        let q = [0.2, -0.5, 0.1, 0.9];
        let q3: Vec<f64> = q.iter().map(|v| 3.0 * v).collect();
        let s1 = attention_scores(&q, &keys, &store).unwrap();
        let s3 = attention_scores(&q3, &keys, &store).unwrap();
        for (a, b) in s1.iter().zip(&s3) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let (p, store) = setup((4, 4));
        assert!(matches!(
            pixel_keys(&image(8, 8, 1), &image(8, 9, 2), &store, &p),
            Err(Error::DimensionMismatch(_))
        ));
        let keys = pixel_keys(&image(8, 8, 1), &image(8, 8, 2), &store, &p).unwrap();
        assert!(matches!(
            attention_scores(&[1.0; 5], &keys, &store),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            fuse(&image(4, 4, 1), &image(4, 4, 2), &[f64::NAN; 4], (2, 2)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let (h, w) = (9, 11);
        let (p, mut store) = setup((4, 5));
        let xa = image(h, w, 21);
        let xb = image(h, w, 22);
        let q = vec![0.5, -0.3, 0.8, 0.1];
        let probe: Vec<f64> = (0..h * w * 3).map(|i| ((i * 31 % 17) as f64 - 8.0) / 8.0).collect();
        store.insert("q", Tensor::from_vec(&[4], q.clone()).unwrap(), true).unwrap();
        store.insert("xa", Tensor::from_vec(&[h, w, 3], xa.data().to_vec()).unwrap(), true).unwrap();
        store.insert("xb", Tensor::from_vec(&[h, w, 3], xb.data().to_vec()).unwrap(), true).unwrap();

        let trace = attention_forward(&q, &xa, &xb, &store, &p).unwrap();
        let g = attention_backward(&q, &xa, &xb, &trace, &probe, &store).unwrap();
        store.accumulate_grad_slice("q", &g.query).unwrap();
        store.accumulate_grad_slice(QUERY_PROJ, &g.query_proj).unwrap();
        store.accumulate_grad_slice(KEY_PROJ, &g.key_proj).unwrap();
        store.accumulate_grad_slice("xa", &g.xa).unwrap();
        store.accumulate_grad_slice("xb", &g.xb).unwrap();

        let f = |s: &ParamStore| -> Result<f64> {
            let xa = ImageTensor::new(h, w, s.value("xa")?.data().to_vec())?;
            let xb = ImageTensor::new(h, w, s.value("xb")?.data().to_vec())?;
            let t = attention_forward(s.value("q")?.data(), &xa, &xb, s, &p)?;
            Ok(t.fused.data().iter().zip(&probe).map(|(a, b)| a * b).sum())
        };
        let report = fd_gradient_check(f, &store, 1e-4, 1e-4).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn learnable_mask_gradient() {
        let (xa, xb) = (image(6, 6, 4), image(6, 6, 5));
        let mut store = ParamStore::new();
        init_mask_logit(&mut store).unwrap();
        store.value_mut(MASK_LOGIT).unwrap().data_mut()[0] = 0.4;
        let probe: Vec<f64> = (0..108).map(|i| (i as f64 * 0.37).sin()).collect();
        let (_, m) = learnable_mask_fuse(&xa, &xb, &store).unwrap();
        let (_, _, dl) = learnable_mask_backward(&xa, &xb, m, &probe);
        store.accumulate_grad_slice(MASK_LOGIT, &[dl]).unwrap();
        let f = |s: &ParamStore| -> Result<f64> {
            let (out, _) = learnable_mask_fuse(&xa, &xb, s)?;
            Ok(out.data().iter().zip(&probe).map(|(a, b)| a * b).sum())
        };
        assert!(fd_gradient_check(f, &store, 1e-4, 1e-4).unwrap().pass);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in FusionMode::ALL {
            assert_eq!(FusionMode::parse(m.name()).unwrap(), m);
        }
        assert!(FusionMode::parse("softmax").is_err());
    }

    proptest! {
        #[test]
        fn shift_invariance_and_range(
            s in proptest::collection::vec(-6.0f64..6.0, 12),
            c in -50.0f64..50.0,
            seed in 0u64..1000,
        ) {
            let (xa, xb) = (image(6, 8, seed), image(6, 8, seed + 1));
            let (f1, a1) = fuse(&xa, &xb, &s, (3, 4)).unwrap();
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            let (f2, a2) = fuse(&xa, &xb, &shifted, (3, 4)).unwrap();
            for (p, q) in a1.data().iter().zip(a2.data()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
            prop_assert!(a1.data().iter().all(|v| *v > 0.0 && *v < 1.0));
            for i in 0..f1.data().len() {
                let lo = xa.data()[i].min(xb.data()[i]);
                let hi = xa.data()[i].max(xb.data()[i]);
                prop_assert!(f1.data()[i] >= lo - 1e-12 && f1.data()[i] <= hi + 1e-12);
                prop_assert!((f1.data()[i] - f2.data()[i]).abs() < 1e-9);
            }
            let spread = s.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - s.iter().copied().fold(f64::INFINITY, f64::min);
            if spread > 1e-9 {
                let g = grid_attention(&s).unwrap();
                prop_assert!(g.iter().any(|v| *v > 0.5) && g.iter().any(|v| *v < 0.5));
            }
        }
    }
}
