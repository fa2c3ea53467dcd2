#ifndef WINCONV_H
#define WINCONV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WcStatus {
  WC_STATUS_OK = 0,
  WC_STATUS_NULL_POINTER = 1,
  WC_STATUS_SHAPE = 2,
  WC_STATUS_SIZE = 3,
  WC_STATUS_AXIS = 4,
  WC_STATUS_RANGE = 5,
  WC_STATUS_UNDEFINED = 6,
  WC_STATUS_FORMAT = 7,
  WC_STATUS_IO = 8,
  WC_STATUS_CONFIG = 9,
  WC_STATUS_DATA = 10,
  WC_STATUS_NUMERIC = 11,
  WC_STATUS_INVALID_ARGUMENT = 12,
  WC_STATUS_BUFFER_TOO_SMALL = 13,
  WC_STATUS_PANIC = 14,
} WcStatus;

typedef enum WcWindowFamily {
  WC_WINDOW_FAMILY_RECTANGULAR = 0,
  WC_WINDOW_FAMILY_HAMMING = 1,
} WcWindowFamily;

/**
 * Opaque network with its weights.
 */
typedef struct WcModel WcModel;

/**
 * Opaque n-dimensional array of doubles.
 */
typedef struct WcTensor WcTensor;

typedef struct WcLeakage {
  double peak_mainlobe;
  double peak_sidelobe;
  /**
   * `-INFINITY` when there is no sidelobe.
   */
  double sidelobe_db;
  double out_of_band_energy_fraction;
  size_t mainlobe_bins;
} WcLeakage;

typedef struct WcDeepFoolResult {
  bool success;
  size_t iterations;
  double perturbation_norm;
  size_t clean_prediction;
  size_t final_prediction;
} WcDeepFoolResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (NUL terminated,
 * truncated to `cap`) into `buf` and returns the full message length.
 *
 * # Safety
 * `buf` must be NULL or point to `cap` writable bytes.
 */
size_t wc_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *wc_version(void);

/**
 * New tensor of the given shape, copying `len` row-major values.
 *
 * # Safety
 * `shape` must point to `ndim` values and `data` to `len` values.
 */
enum WcStatus wc_tensor_new(const size_t *shape,
                            size_t ndim,
                            const double *data,
                            size_t len,
                            struct WcTensor **out_tensor);

/**
 * # Safety
 * `t` must be NULL or a handle from this library that was not freed yet.
 */
void wc_tensor_free(struct WcTensor *t);

/**
 * # Safety
 * `t` must be a live tensor handle.
 */
size_t wc_tensor_ndim(const struct WcTensor *t);

/**
 * # Safety
 * `t` must be a live tensor handle.
 */
size_t wc_tensor_len(const struct WcTensor *t);

/**
 * # Safety
 * `t` must be a live tensor handle and `shape` hold `cap` values.
 */
enum WcStatus wc_tensor_shape(const struct WcTensor *t, size_t *shape, size_t cap);

/**
 * # Safety
 * `t` must be a live tensor handle and `data` hold `cap` values.
 */
enum WcStatus wc_tensor_data(const struct WcTensor *t, double *data, size_t cap);

/**
 * The `k` Hamming coefficients.
 *
 * # Safety
 * `out_coeffs` must hold `cap` values.
 */
enum WcStatus wc_hamming_1d(size_t k, double *out_coeffs, size_t cap);

/**
 * `[k_rows, k_cols]` window coefficients.
 *
 * # Safety
 * `out_tensor` must be writable.
 */
enum WcStatus wc_window_2d(enum WcWindowFamily family,
                           size_t k_rows,
                           size_t k_cols,
                           struct WcTensor **out_tensor);

/**
 * Unnormalized 2-D DFT magnitude of a square `[P, P]` tensor.
 *
 * # Safety
 * `x` must be a live tensor handle and `out_tensor` writable.
 */
enum WcStatus wc_dft2_mag(const struct WcTensor *x, struct WcTensor **out_tensor);

/**
 * Magnitude response of a `[k, k]` kernel on a `p x p` grid.
 *
 * # Safety
 * `kernel` must be a live tensor handle and `out_tensor` writable.
 */
enum WcStatus wc_kernel_frequency_response(const struct WcTensor *kernel,
                                           size_t p,
                                           struct WcTensor **out_tensor);

/**
 * Main lobe and sidelobe figures of a `[P, P]` magnitude spectrum.
 *
 * # Safety
 * `spectrum` must be a live tensor handle and `out_report` writable.
 */
enum WcStatus wc_leakage_metrics(const struct WcTensor *spectrum,
                                 double threshold_db,
                                 struct WcLeakage *out_report);

/**
 * Freshly initialized model from a JSON model spec.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string and `out_model` writable.
 */
enum WcStatus wc_model_from_spec_json(const char *spec_json,
                                      uint64_t seed,
                                      struct WcModel **out_model);

/**
 * # Safety
 * `dir` must be a NUL-terminated path and `out_model` writable.
 */
enum WcStatus wc_model_load(const char *dir, struct WcModel **out_model);

/**
 * # Safety
 * `model` must be a live handle and `dir` a NUL-terminated path.
 */
enum WcStatus wc_model_save(const struct WcModel *model, const char *dir);

/**
 * # Safety
 * `m` must be NULL or a handle from this library that was not freed yet.
 */
void wc_model_free(struct WcModel *m);

/**
 * # Safety
 * `model` must be a live handle.
 */
size_t wc_model_num_outputs(const struct WcModel *model);

/**
 * Number of conv layers.
 *
 * # Safety
 * `model` must be a live handle.
 */
size_t wc_model_num_convs(const struct WcModel *model);

/**
 * Writes `[C, H, W]` into `shape`.
 *
 * # Safety
 * `model` must be a live handle and `shape` hold 3 values.
 */
enum WcStatus wc_model_input_shape(const struct WcModel *model, size_t *shape);

/**
 * Outputs `[B, n]` for a `[B, C, H, W]` batch.
 *
 * # Safety
 * Handles must be live and `out_tensor` writable.
 */
enum WcStatus wc_model_predict(const struct WcModel *model,
                               const struct WcTensor *batch,
                               struct WcTensor **out_tensor);

/**
 * Effective (windowed) kernel `[k, k, C, M]` of conv layer `layer`.
 *
 * # Safety
 * `model` must be a live handle and `out_tensor` writable.
 */
enum WcStatus wc_model_effective_kernel(const struct WcModel *model,
                                        size_t layer,
                                        struct WcTensor **out_tensor);

/**
 * Orthogonality deviation of conv layer `layer` at the model's input shape.
 *
 * # Safety
 * `model` must be a live handle and `out_d` writable.
 */
enum WcStatus wc_model_ortho_deviation(const struct WcModel *model, size_t layer, double *out_d);

/**
 * DeepFool on one `[C, H, W]` image of a classifier. When `out_image` is
 * not NULL it receives the perturbed image, or NULL if there is none.
 *
 * # Safety
 * Handles must be live, `out_result` writable, `out_image` NULL or writable.
 */
enum WcStatus wc_deepfool(const struct WcModel *model,
                          const struct WcTensor *image,
                          size_t label,
                          size_t max_iter,
                          double overshoot,
                          struct WcDeepFoolResult *out_result,
                          struct WcTensor **out_image);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WINCONV_H */
