#ifndef DEEPECPR_H
#define DEEPECPR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum DeepecprStatus {
  DEEPECPR_STATUS_OK = 0,
  DEEPECPR_STATUS_NULL_POINTER = 1,
  DEEPECPR_STATUS_INVALID_ARGUMENT = 2,
  DEEPECPR_STATUS_IO = 3,
  DEEPECPR_STATUS_FORMAT = 4,
  DEEPECPR_STATUS_SOLVER = 5,
  DEEPECPR_STATUS_DENOISER = 6,
  DEEPECPR_STATUS_PANIC = 7,
} DeepecprStatus;

/**
 * A parsed and validated experiment configuration.
 */
typedef struct DeepecprConfig DeepecprConfig;

/**
 * The outcome of one reconstruction.
 */
typedef struct DeepecprResult DeepecprResult;

/**
 * Scalar metrics of a finished run.
 */
typedef struct DeepecprMetrics {
  double psnr;
  double ssim;
  double residual;
  size_t denoiser_calls;
  double wall_time_s;
} DeepecprMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *deepecpr_version(void);

/**
 * Length in bytes of the last error message on this thread, including the
 * terminating NUL. Zero if no call has failed.
 */
size_t deepecpr_last_error_length(void);

/**
 * Copies the last error message into `buf`, truncating to `len - 1` bytes
 * and always NUL-terminating. Returns the number of bytes written excluding
 * the NUL, or -1 if `buf` is null or `len` is zero.
 */
ptrdiff_t deepecpr_last_error_message(char *buf, size_t len);

/**
 * Clears the last error on this thread.
 */
void deepecpr_clear_last_error(void);

/**
 * Parses a configuration from JSON. Relative image and output paths resolve
 * against `base_dir`, or the working directory when it is null.
 */
enum DeepecprStatus deepecpr_config_from_json(const char *json,
                                              const char *base_dir,
                                              struct DeepecprConfig **out);

/**
 * Reads a configuration file. Relative paths inside it resolve against the
 * file's directory.
 */
enum DeepecprStatus deepecpr_config_load(const char *path, struct DeepecprConfig **out);

void deepecpr_config_free(struct DeepecprConfig *config);

/**
 * Number of (image, seed) jobs, images outermost. Zero for a null handle.
 */
size_t deepecpr_config_job_count(const struct DeepecprConfig *config);

/**
 * Simulates and stores the measurements of job `index` under `out_dir`
 * (or the configured output when null).
 */
enum DeepecprStatus deepecpr_simulate(const struct DeepecprConfig *config,
                                      size_t index,
                                      const char *out_dir_path);

/**
 * Reconstructs job `index` from measurements previously written by
 * [`deepecpr_simulate`]. `endpoint` overrides the remote denoiser address;
 * when null the configured one is used, then `ECPR_DENOISER_ENDPOINT`.
 */
enum DeepecprStatus deepecpr_run(const struct DeepecprConfig *config,
                                 size_t index,
                                 const char *out_dir_path,
                                 const char *endpoint,
                                 struct DeepecprResult **out);

void deepecpr_result_free(struct DeepecprResult *result);

/**
 * Height, width and channel count of the estimate. Null outputs are skipped.
 */
enum DeepecprStatus deepecpr_result_shape(const struct DeepecprResult *result,
                                          size_t *height,
                                          size_t *width,
                                          size_t *channels);

/**
 * Copies the estimate's pixels, channel-major then row-major, into `buf`,
 * which must hold exactly `height * width * channels` values.
 */
enum DeepecprStatus deepecpr_result_pixels(const struct DeepecprResult *result,
                                           double *buf,
                                           size_t len);

enum DeepecprStatus deepecpr_result_metrics(const struct DeepecprResult *result,
                                            struct DeepecprMetrics *out);

/**
 * PSNR in dB with peak 255 between two images of the given shape, laid out
 * as in [`deepecpr_result_pixels`]. Identical images give infinity.
 */
enum DeepecprStatus deepecpr_psnr(const double *estimate,
                                  const double *truth,
                                  size_t height,
                                  size_t width,
                                  size_t channels,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPECPR_H */
