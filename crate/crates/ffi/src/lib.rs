//! C ABI over the neuroalign core.
//!
//! Conventions:
//! - every fallible function returns an [`NaStatus`]; on failure a message
//!   is available from [`na_last_error`] on the same thread;
//! - objects are opaque handles created by `na_*_new`/`na_*_read` or by an
//!   operation's `out` parameter, and released with the matching `*_free`;
//! - images are `H×W×3` interleaved RGB doubles in `[0, 1]`, row-major;
//!   maps are `H×W`; EEG trials are `C×T` channel-major;
//! - optional output pointers may be NULL.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use neuroalign::align::{batch_stats, boundary_loss};
use neuroalign::blur::{center_blur, compute_saliency, gaussian_blur, saliency_blur, BlurConfig, ImageTensor, WeightMap};
use neuroalign::cli::{read_p6, read_tensor, write_p5, write_p6, write_tensor};
use neuroalign::spectral::{decompose_bands, selection_entropy, selection_weights, BandSpec, EEGTrial};
use neuroalign::{Error, Tensor};

/// Result codes. `NA_STATUS_OK` is zero; every other value is a failure.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    ZeroNorm = 5,
    EdgesCollapse = 6,
    Io = 7,
    Format = 8,
    BadMagic = 9,
    UnsupportedVersion = 10,
    Config = 11,
    Checksum = 12,
    Diverged = 13,
    Panic = 14,
    Other = 15,
}

/// An RGB image.
pub struct NaImage {
    inner: ImageTensor,
}

/// A single-channel weight map (saliency, blend weights).
pub struct NaMap {
    inner: WeightMap,
}

/// A dense tensor as stored in tensor files.
pub struct NaTensor {
    inner: Tensor,
}

/// A frequency-band layout for the filter bank.
pub struct NaBandSpec {
    inner: BandSpec,
}

enum Failure {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NaStatus {
    match e {
        Error::ShapeMismatch { .. } | Error::DimensionMismatch(_) => NaStatus::ShapeMismatch,
        Error::InvalidArgument(_) | Error::UnknownParam(_) | Error::DuplicateParam(_) => NaStatus::InvalidArgument,
        Error::NonFinite(_) => NaStatus::NonFinite,
        Error::ZeroNorm(_) => NaStatus::ZeroNorm,
        Error::EdgesCollapse(_) => NaStatus::EdgesCollapse,
        Error::Io(_) | Error::OutputExists(_) => NaStatus::Io,
        Error::Format(_) | Error::Json(_) => NaStatus::Format,
        Error::BadMagic => NaStatus::BadMagic,
        Error::UnsupportedVersion(_) => NaStatus::UnsupportedVersion,
        Error::Config(_) => NaStatus::Config,
        Error::Checksum(_) => NaStatus::Checksum,
        Error::Diverged { .. } => NaStatus::Diverged,
        #[allow(unreachable_patterns)]
        _ => NaStatus::Other,
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard<F: FnOnce() -> FfiResult<()>>(f: F) -> NaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            NaStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            NaStatus::NullPointer
        }
        Err(_) => {
            set_last_error("internal panic");
            NaStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if n == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(std::slice::from_raw_parts(p, n))
    }
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &'static str) -> FfiResult<&'a mut [T]> {
    if n == 0 {
        Ok(&mut [])
    } else if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(std::slice::from_raw_parts_mut(p, n))
    }
}

unsafe fn path(p: *const c_char) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument("path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_opt<T>(out: *mut *mut T, value: T) {
    if !out.is_null() {
        *out = Box::into_raw(Box::new(value));
    }
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn blur_config(sigma: f64, w0: f64, g: f64) -> Result<BlurConfig, Error> {
    let cfg = BlurConfig { sigma, w0, g };
    cfg.validate()?;
    Ok(cfg)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn na_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the most recent failure on this thread (empty after
/// a success). Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn na_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

// ---------------------------------------------------------------- images

/// Copy `h·w·3` values into a new image.
///
/// # Safety
/// `data` must point to `h·w·3` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_image_new(h: usize, w: usize, data: *const f64, out: *mut *mut NaImage) -> NaStatus {
    guard(|| {
        let n = h.checked_mul(w).and_then(|v| v.checked_mul(3)).ok_or(Error::InvalidArgument("image too large".into()))?;
        let img = ImageTensor::new(h, w, slice(data, n, "data")?.to_vec())?;
        put(out, NaImage { inner: img })
    })
}

/// # Safety
/// `img` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn na_image_free(img: *mut NaImage) {
    free(img)
}

/// # Safety
/// `img` must be a live handle; `h` and `w` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_image_dims(img: *const NaImage, h: *mut usize, w: *mut usize) -> NaStatus {
    guard(|| {
        let img = deref(img, "img")?;
        if h.is_null() || w.is_null() {
            return Err(Failure::Null("dims"));
        }
        (*h, *w) = img.inner.dims();
        Ok(())
    })
}

/// Pointer to the image's `h·w·3` values, owned by the handle.
///
/// # Safety
/// `img` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn na_image_data(img: *const NaImage) -> *const f64 {
    img.as_ref().map_or(std::ptr::null(), |i| i.inner.data().as_ptr())
}

/// # Safety
/// `file` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_image_read_ppm(file: *const c_char, out: *mut *mut NaImage) -> NaStatus {
    guard(|| {
        let img = read_p6(&path(file)?)?;
        put(out, NaImage { inner: img })
    })
}

/// # Safety
/// `img` must be a live handle; `file` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn na_image_write_ppm(img: *const NaImage, file: *const c_char) -> NaStatus {
    guard(|| Ok(write_p6(&path(file)?, &deref(img, "img")?.inner)?))
}

// ------------------------------------------------------------------ maps

/// # Safety
/// `map` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn na_map_free(map: *mut NaMap) {
    free(map)
}

/// # Safety
/// `map` must be a live handle; `h` and `w` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_map_dims(map: *const NaMap, h: *mut usize, w: *mut usize) -> NaStatus {
    guard(|| {
        let map = deref(map, "map")?;
        if h.is_null() || w.is_null() {
            return Err(Failure::Null("dims"));
        }
        (*h, *w) = map.inner.dims();
        Ok(())
    })
}

/// Pointer to the map's `h·w` values, owned by the handle.
///
/// # Safety
/// `map` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn na_map_data(map: *const NaMap) -> *const f64 {
    map.as_ref().map_or(std::ptr::null(), |m| m.inner.data().as_ptr())
}

/// # Safety
/// `map` must be a live handle; `file` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn na_map_write_pgm(map: *const NaMap, file: *const c_char) -> NaStatus {
    guard(|| Ok(write_p5(&path(file)?, &deref(map, "map")?.inner)?))
}

// ------------------------------------------------------------------ blur

/// Separable Gaussian blur with reflect padding.
///
/// # Safety
/// `img` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_gaussian_blur(img: *const NaImage, sigma: f64, out: *mut *mut NaImage) -> NaStatus {
    guard(|| {
        let blurred = gaussian_blur(&deref(img, "img")?.inner, sigma)?;
        put(out, NaImage { inner: blurred })
    })
}

/// Multi-scale center-surround contrast saliency in `[0, 1]`.
///
/// # Safety
/// `scales` must point to `n_scales` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_saliency(
    img: *const NaImage,
    scales: *const usize,
    n_scales: usize,
    out: *mut *mut NaMap,
) -> NaStatus {
    guard(|| {
        let map = compute_saliency(&deref(img, "img")?.inner, slice(scales, n_scales, "scales")?)?;
        put(out, NaMap { inner: map })
    })
}

/// Saliency-guided blend; `weights` (optional) receives `w_S`.
///
/// # Safety
/// Handles must be live; `out` must be writable; `weights` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn na_saliency_blur(
    img: *const NaImage,
    saliency: *const NaMap,
    sigma: f64,
    w0: f64,
    g: f64,
    out: *mut *mut NaImage,
    weights: *mut *mut NaMap,
) -> NaStatus {
    guard(|| {
        let cfg = blur_config(sigma, w0, g)?;
        let (x, w) = saliency_blur(&deref(img, "img")?.inner, &deref(saliency, "saliency")?.inner, &cfg)?;
        put(out, NaImage { inner: x })?;
        put_opt(weights, NaMap { inner: w });
        Ok(())
    })
}

/// Center-biased radial blend; `weights` (optional) receives `w_R`.
///
/// # Safety
/// `img` must be live; `out` must be writable; `weights` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn na_center_blur(
    img: *const NaImage,
    sigma: f64,
    w0: f64,
    g: f64,
    out: *mut *mut NaImage,
    weights: *mut *mut NaMap,
) -> NaStatus {
    guard(|| {
        let cfg = blur_config(sigma, w0, g)?;
        let (x, w) = center_blur(&deref(img, "img")?.inner, &cfg)?;
        put(out, NaImage { inner: x })?;
        put_opt(weights, NaMap { inner: w });
        Ok(())
    })
}

// ------------------------------------------------------------- spectral

/// The five canonical rhythms (δ, θ, α, β, γ) at sample rate `fs`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_band_spec_canonical(fs: f64, out: *mut *mut NaBandSpec) -> NaStatus {
    guard(|| {
        if !(fs > 0.0) {
            return Err(Error::InvalidArgument(format!("sample rate must be > 0, got {fs}")).into());
        }
        put(out, NaBandSpec { inner: BandSpec::canonical(fs) })
    })
}

/// # Safety
/// `spec` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn na_band_spec_free(spec: *mut NaBandSpec) {
    free(spec)
}

/// Number of bands, 0 for a NULL handle.
///
/// # Safety
/// `spec` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn na_band_spec_n_bands(spec: *const NaBandSpec) -> usize {
    spec.as_ref().map_or(0, |s| s.inner.n_bands())
}

/// Replace the per-band edge scales γ (`n` must equal the band count).
///
/// # Safety
/// `spec` must be live; `gamma` must point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn na_band_spec_set_gamma(spec: *mut NaBandSpec, gamma: *const f64, n: usize) -> NaStatus {
    guard(|| {
        let spec = spec.as_mut().ok_or(Failure::Null("spec"))?;
        let gamma = slice(gamma, n, "gamma")?;
        if n != spec.inner.n_bands() {
            return Err(Error::DimensionMismatch(format!("{n} scales for {} bands", spec.inner.n_bands())).into());
        }
        let mut next = spec.inner.clone();
        next.gamma = gamma.to_vec();
        next.validate()?;
        spec.inner = next;
        Ok(())
    })
}

/// Effective band edges at `fs` (`n_bands + 1` values).
///
/// # Safety
/// `spec` must be live; `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn na_band_spec_edges(spec: *const NaBandSpec, fs: f64, out: *mut f64, cap: usize) -> NaStatus {
    guard(|| {
        let edges = deref(spec, "spec")?.inner.effective_edges(fs)?;
        if cap < edges.len() {
            return Err(Error::DimensionMismatch(format!("need room for {} edges", edges.len())).into());
        }
        slice_mut(out, edges.len(), "out")?.copy_from_slice(&edges);
        Ok(())
    })
}

/// Decompose a `channels × samples` trial into its bands. `out` receives
/// `n_bands × channels × samples` values, band-major.
///
/// # Safety
/// `x` must point to `channels·samples` values and `out` to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn na_decompose_bands(
    spec: *const NaBandSpec,
    channels: usize,
    samples: usize,
    fs: f64,
    x: *const f64,
    out: *mut f64,
    out_len: usize,
) -> NaStatus {
    guard(|| {
        let spec = &deref(spec, "spec")?.inner;
        let n = channels.checked_mul(samples).ok_or(Error::InvalidArgument("trial too large".into()))?;
        let trial = EEGTrial::new(channels, samples, fs, slice(x, n, "x")?.to_vec())?;
        let sub = decompose_bands(&trial, spec)?;
        let need = sub.n_bands() * n;
        if out_len != need {
            return Err(Error::DimensionMismatch(format!("output holds {out_len} values, need {need}")).into());
        }
        let out = slice_mut(out, need, "out")?;
        for (dst, band) in out.chunks_exact_mut(n).zip(&sub.components) {
            dst.copy_from_slice(band.data());
        }
        Ok(())
    })
}

/// Tempered softmax over `n` band logits; `entropy` (optional) receives
/// the natural-log entropy of the result.
///
/// # Safety
/// `logits` and `m` must point to `n` values; `entropy` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn na_selection_weights(
    logits: *const f64,
    n: usize,
    tau: f64,
    m: *mut f64,
    entropy: *mut f64,
) -> NaStatus {
    guard(|| {
        let w = selection_weights(slice(logits, n, "logits")?, tau)?;
        slice_mut(m, n, "m")?.copy_from_slice(&w);
        if !entropy.is_null() {
            *entropy = selection_entropy(&w);
        }
        Ok(())
    })
}

// ---------------------------------------------------------- calibration

/// Boundary calibration loss of `n` matched-pair similarities at
/// two-sided level `alpha`. `grad` (optional, `n` values) receives
/// `∂loss/∂s`, through the batch statistics unless `detach_stats`.
/// `outlier_fraction` (optional) receives the share outside the interval.
///
/// # Safety
/// `s` must point to `n` values; `loss` must be writable; `grad` and
/// `outlier_fraction` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn na_boundary_loss(
    s: *const f64,
    n: usize,
    alpha: f64,
    detach_stats: bool,
    loss: *mut f64,
    grad: *mut f64,
    outlier_fraction: *mut f64,
) -> NaStatus {
    guard(|| {
        let s = slice(s, n, "s")?;
        if loss.is_null() {
            return Err(Failure::Null("loss"));
        }
        let stats = batch_stats(s, alpha)?;
        let b = boundary_loss(s, &stats, detach_stats)?;
        *loss = b.loss;
        if !grad.is_null() {
            slice_mut(grad, n, "grad")?.copy_from_slice(&b.d_s);
        }
        if !outlier_fraction.is_null() {
            *outlier_fraction = stats.outlier_fraction();
        }
        Ok(())
    })
}

// --------------------------------------------------------------- tensors

/// # Safety
/// `dims` must point to `rank` values and `data` to their product.
#[no_mangle]
pub unsafe extern "C" fn na_tensor_new(
    rank: usize,
    dims: *const usize,
    data: *const f64,
    out: *mut *mut NaTensor,
) -> NaStatus {
    guard(|| {
        let dims = slice(dims, rank, "dims")?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(Error::InvalidArgument("tensor too large".into()))?;
        let t = Tensor::from_vec(dims, slice(data, n, "data")?.to_vec())?;
        put(out, NaTensor { inner: t })
    })
}

/// # Safety
/// `t` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn na_tensor_free(t: *mut NaTensor) {
    free(t)
}

/// # Safety
/// `file` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_tensor_read(file: *const c_char, out: *mut *mut NaTensor) -> NaStatus {
    guard(|| {
        let t = read_tensor(&path(file)?)?;
        put(out, NaTensor { inner: t })
    })
}

/// Values are stored as 32-bit floats.
///
/// # Safety
/// `t` must be live; `file` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn na_tensor_write(t: *const NaTensor, file: *const c_char) -> NaStatus {
    guard(|| Ok(write_tensor(&path(file)?, &deref(t, "tensor")?.inner)?))
}

/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn na_tensor_rank(t: *const NaTensor) -> usize {
    t.as_ref().map_or(0, |t| t.inner.shape().len())
}

/// Total number of elements.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn na_tensor_len(t: *const NaTensor) -> usize {
    t.as_ref().map_or(0, |t| t.inner.len())
}

/// # Safety
/// `t` must be live; `dims` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn na_tensor_dims(t: *const NaTensor, dims: *mut usize, cap: usize) -> NaStatus {
    guard(|| {
        let shape = deref(t, "tensor")?.inner.shape();
        if cap < shape.len() {
            return Err(Error::DimensionMismatch(format!("need room for {} dims", shape.len())).into());
        }
        slice_mut(dims, shape.len(), "dims")?.copy_from_slice(shape);
        Ok(())
    })
}

/// Pointer to the tensor's values, owned by the handle.
///
/// # Safety
/// `t` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn na_tensor_data(t: *const NaTensor) -> *const f64 {
    t.as_ref().map_or(std::ptr::null(), |t| t.inner.data().as_ptr())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_distinct_codes() {
        let cases = [
            (Error::BadMagic, NaStatus::BadMagic),
            (Error::UnsupportedVersion(2), NaStatus::UnsupportedVersion),
            (Error::Format("x".into()), NaStatus::Format),
            (Error::ZeroNorm("v"), NaStatus::ZeroNorm),
            (Error::DimensionMismatch("x".into()), NaStatus::ShapeMismatch),
            (Error::Diverged { step: 3, loss: f64::NAN }, NaStatus::Diverged),
        ];
        for (e, code) in cases {
            assert_eq!(status_of(&e), code, "{e}");
        }
    }

    #[test]
    fn panics_become_a_status() {
        let st = guard(|| panic!("boom"));
        assert_eq!(st, NaStatus::Panic);
        let msg = unsafe { CStr::from_ptr(na_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
    }
}
