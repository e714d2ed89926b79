#ifndef NEUROALIGN_H
#define NEUROALIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result codes. `NA_STATUS_OK` is zero; every other value is a failure.
typedef enum NaStatus {
  NA_STATUS_OK = 0,
  NA_STATUS_NULL_POINTER = 1,
  NA_STATUS_INVALID_ARGUMENT = 2,
  NA_STATUS_SHAPE_MISMATCH = 3,
  NA_STATUS_NON_FINITE = 4,
  NA_STATUS_ZERO_NORM = 5,
  NA_STATUS_EDGES_COLLAPSE = 6,
  NA_STATUS_IO = 7,
  NA_STATUS_FORMAT = 8,
  NA_STATUS_BAD_MAGIC = 9,
  NA_STATUS_UNSUPPORTED_VERSION = 10,
  NA_STATUS_CONFIG = 11,
  NA_STATUS_CHECKSUM = 12,
  NA_STATUS_DIVERGED = 13,
  NA_STATUS_PANIC = 14,
  NA_STATUS_OTHER = 15,
} NaStatus;

// A frequency-band layout for the filter bank.
typedef struct NaBandSpec NaBandSpec;

// An RGB image.
typedef struct NaImage NaImage;

// A single-channel weight map (saliency, blend weights).
typedef struct NaMap NaMap;

// A dense tensor as stored in tensor files.
typedef struct NaTensor NaTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *na_version(void);

// Message describing the most recent failure on this thread (empty after
// a success). Valid until the next call into the library on this thread.
const char *na_last_error(void);

// Copy `h·w·3` values into a new image.
//
// # Safety
// `data` must point to `h·w·3` readable doubles; `out` must be writable.
enum NaStatus na_image_new(size_t h, size_t w, const double *data, struct NaImage **out);

// # Safety
// `img` must be NULL or a handle from this library, not yet freed.
void na_image_free(struct NaImage *img);

// # Safety
// `img` must be a live handle; `h` and `w` must be writable.
enum NaStatus na_image_dims(const struct NaImage *img, size_t *h, size_t *w);

// Pointer to the image's `h·w·3` values, owned by the handle.
//
// # Safety
// `img` must be a live handle.
const double *na_image_data(const struct NaImage *img);

// # Safety
// `file` must be a NUL-terminated path; `out` must be writable.
enum NaStatus na_image_read_ppm(const char *file, struct NaImage **out);

// # Safety
// `img` must be a live handle; `file` a NUL-terminated path.
enum NaStatus na_image_write_ppm(const struct NaImage *img, const char *file);

// # Safety
// `map` must be NULL or a handle from this library, not yet freed.
void na_map_free(struct NaMap *map);

// # Safety
// `map` must be a live handle; `h` and `w` must be writable.
enum NaStatus na_map_dims(const struct NaMap *map, size_t *h, size_t *w);

// Pointer to the map's `h·w` values, owned by the handle.
//
// # Safety
// `map` must be a live handle.
const double *na_map_data(const struct NaMap *map);

// # Safety
// `map` must be a live handle; `file` a NUL-terminated path.
enum NaStatus na_map_write_pgm(const struct NaMap *map, const char *file);

// Separable Gaussian blur with reflect padding.
//
// # Safety
// `img` must be a live handle; `out` must be writable.
enum NaStatus na_gaussian_blur(const struct NaImage *img, double sigma, struct NaImage **out);

// Multi-scale center-surround contrast saliency in `[0, 1]`.
//
// # Safety
// `scales` must point to `n_scales` values; `out` must be writable.
enum NaStatus na_saliency(const struct NaImage *img,
                          const size_t *scales,
                          size_t n_scales,
                          struct NaMap **out);

// Saliency-guided blend; `weights` (optional) receives `w_S`.
//
// # Safety
// Handles must be live; `out` must be writable; `weights` may be NULL.
enum NaStatus na_saliency_blur(const struct NaImage *img,
                               const struct NaMap *saliency,
                               double sigma,
                               double w0,
                               double g,
                               struct NaImage **out,
                               struct NaMap **weights);

// Center-biased radial blend; `weights` (optional) receives `w_R`.
//
// # Safety
// `img` must be live; `out` must be writable; `weights` may be NULL.
enum NaStatus na_center_blur(const struct NaImage *img,
                             double sigma,
                             double w0,
                             double g,
                             struct NaImage **out,
                             struct NaMap **weights);

// The five canonical rhythms (δ, θ, α, β, γ) at sample rate `fs`.
//
// # Safety
// `out` must be writable.
enum NaStatus na_band_spec_canonical(double fs, struct NaBandSpec **out);

// # Safety
// `spec` must be NULL or a handle from this library, not yet freed.
void na_band_spec_free(struct NaBandSpec *spec);

// Number of bands, 0 for a NULL handle.
//
// # Safety
// `spec` must be NULL or a live handle.
size_t na_band_spec_n_bands(const struct NaBandSpec *spec);

// Replace the per-band edge scales γ (`n` must equal the band count).
//
// # Safety
// `spec` must be live; `gamma` must point to `n` values.
enum NaStatus na_band_spec_set_gamma(struct NaBandSpec *spec, const double *gamma, size_t n);

// Effective band edges at `fs` (`n_bands + 1` values).
//
// # Safety
// `spec` must be live; `out` must hold `cap` doubles.
enum NaStatus na_band_spec_edges(const struct NaBandSpec *spec, double fs, double *out, size_t cap);

// Decompose a `channels × samples` trial into its bands. `out` receives
// `n_bands × channels × samples` values, band-major.
//
// # Safety
// `x` must point to `channels·samples` values and `out` to `out_len`.
enum NaStatus na_decompose_bands(const struct NaBandSpec *spec,
                                 size_t channels,
                                 size_t samples,
                                 double fs,
                                 const double *x,
                                 double *out,
                                 size_t out_len);

// Tempered softmax over `n` band logits; `entropy` (optional) receives
// the natural-log entropy of the result.
//
// # Safety
// `logits` and `m` must point to `n` values; `entropy` may be NULL.
enum NaStatus na_selection_weights(const double *logits,
                                   size_t n,
                                   double tau,
                                   double *m,
                                   double *entropy);

// Boundary calibration loss of `n` matched-pair similarities at
// two-sided level `alpha`. `grad` (optional, `n` values) receives
// `∂loss/∂s`, through the batch statistics unless `detach_stats`.
// `outlier_fraction` (optional) receives the share outside the interval.
//
// # Safety
// `s` must point to `n` values; `loss` must be writable; `grad` and
// `outlier_fraction` may be NULL.
enum NaStatus na_boundary_loss(const double *s,
                               size_t n,
                               double alpha,
                               bool detach_stats,
                               double *loss,
                               double *grad,
                               double *outlier_fraction);

// # Safety
// `dims` must point to `rank` values and `data` to their product.
enum NaStatus na_tensor_new(size_t rank,
                            const size_t *dims,
                            const double *data,
                            struct NaTensor **out);

// # Safety
// `t` must be NULL or a handle from this library, not yet freed.
void na_tensor_free(struct NaTensor *t);

// # Safety
// `file` must be a NUL-terminated path; `out` must be writable.
enum NaStatus na_tensor_read(const char *file, struct NaTensor **out);

// Values are stored as 32-bit floats.
//
// # Safety
// `t` must be live; `file` a NUL-terminated path.
enum NaStatus na_tensor_write(const struct NaTensor *t, const char *file);

// # Safety
// `t` must be NULL or a live handle.
size_t na_tensor_rank(const struct NaTensor *t);

// Total number of elements.
//
// # Safety
// `t` must be NULL or a live handle.
size_t na_tensor_len(const struct NaTensor *t);

// # Safety
// `t` must be live; `dims` must hold `cap` values.
enum NaStatus na_tensor_dims(const struct NaTensor *t, size_t *dims, size_t cap);

// Pointer to the tensor's values, owned by the handle.
//
// # Safety
// `t` must be a live handle.
const double *na_tensor_data(const struct NaTensor *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEUROALIGN_H */
