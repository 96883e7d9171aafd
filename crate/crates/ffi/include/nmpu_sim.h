/* SPDX-License-Identifier: Apache-2.0 */

#ifndef NMPU_SIM_H
#define NMPU_SIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Bumped on any incompatible change to this interface.
 */
#define NMPU_ABI_VERSION 1

/*
 Number of architectures reported by [`nmpu_explore`].
 */
#define NMPU_ARCHITECTURES 15

typedef enum NmpuStatus {
  NMPU_STATUS_OK = 0,
  NMPU_STATUS_NULL_POINTER = 1,
  NMPU_STATUS_INVALID_ARGUMENT = 2,
  NMPU_STATUS_RANGE = 3,
  NMPU_STATUS_OVERFLOW = 4,
  NMPU_STATUS_DOMAIN = 5,
  NMPU_STATUS_PARSE = 6,
  NMPU_STATUS_SHAPE = 7,
  NMPU_STATUS_SINGULAR_FIT = 8,
  NMPU_STATUS_BUFFER_TOO_SMALL = 9,
  NMPU_STATUS_PANIC = 10,
} NmpuStatus;

/*
 Opaque ADC population with its affine calibration.
 */
typedef struct NmpuAdcHandle NmpuAdcHandle;

/*
 Opaque datapath configuration.
 */
typedef struct NmpuConfigHandle NmpuConfigHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread; empty after a success.
 */
const char *nmpu_last_error(void);

uint32_t nmpu_abi_version(void);

/*
 Creates a configuration from raw register values.

 # Safety
 `out` must be a valid pointer to writable storage for one handle pointer.
 */
enum NmpuStatus nmpu_config_new_raw(uint8_t scale_p_raw,
                                    uint8_t scale_n_raw,
                                    uint32_t shift,
                                    int8_t offset_raw,
                                    uint8_t first,
                                    uint8_t second,
                                    bool relu,
                                    struct NmpuConfigHandle **out);

/*
 Creates a configuration by quantizing real effective scales and offset.

 # Safety
 `out` must be a valid pointer to writable storage for one handle pointer.
 */
enum NmpuStatus nmpu_config_new_real(double scale_p,
                                     double scale_n,
                                     double offset,
                                     uint8_t first,
                                     uint8_t second,
                                     bool relu,
                                     struct NmpuConfigHandle **out);

/*
 Parses a `key = value` configuration as written by [`nmpu_config_to_kv`].

 # Safety
 `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NmpuStatus nmpu_config_from_kv(const char *text, struct NmpuConfigHandle **out);

/*
 # Safety
 `handle` must be null or a pointer returned by a `nmpu_config_new*`
 function that has not been freed.
 */
void nmpu_config_free(struct NmpuConfigHandle *handle);

/*
 Runs the datapath on one input pair.

 # Safety
 `handle` must be a live handle; `value` and `overflow` valid pointers.
 */
enum NmpuStatus nmpu_config_process(const struct NmpuConfigHandle *handle,
                                    uint16_t in_p,
                                    uint16_t in_n,
                                    int8_t *value,
                                    bool *overflow);

/*
 Runs the datapath on `len` input pairs. `overflow` may be null.

 # Safety
 `in_p`, `in_n` and `values` must point to `len` elements, `overflow` to
 `len` elements or be null.
 */
enum NmpuStatus nmpu_config_process_batch(const struct NmpuConfigHandle *handle,
                                          const uint16_t *in_p,
                                          const uint16_t *in_n,
                                          size_t len,
                                          int8_t *values,
                                          uint8_t *overflow);

/*
 Writes the `key = value` form into `buf` including the terminating NUL.
 `needed` receives the required size in bytes; pass a null `buf` with
 `cap` 0 to query it.

 # Safety
 `buf` must point to `cap` writable bytes or be null with `cap` 0.
 */
enum NmpuStatus nmpu_config_to_kv(const struct NmpuConfigHandle *handle,
                                  char *buf,
                                  size_t cap,
                                  size_t *needed);

/*
 Real-valued reference of the post-processing.
 */
double nmpu_reference_value(uint16_t in_p,
                            uint16_t in_n,
                            double scale_p,
                            double scale_n,
                            double offset,
                            bool relu);

/*
 Half-precision behavioral post-processing, rounded and saturated to 8 bits.
 */
double nmpu_fp16_baseline(uint16_t in_p,
                          uint16_t in_n,
                          double scale_p,
                          double scale_n,
                          double offset,
                          bool relu);

/*
 Folds batch norm into an affine scale and offset.

 # Safety
 `out_scale` and `out_offset` must be valid pointers.
 */
enum NmpuStatus nmpu_fold_bn(double scale,
                             double offset,
                             double gamma,
                             double beta,
                             double mean,
                             double var,
                             double eps,
                             double *out_scale,
                             double *out_offset);

/*
 Compares two built-in perf specs over `n_outputs` outputs.

 # Safety
 `a` and `b` must be NUL-terminated strings; outputs valid pointers.
 */
enum NmpuStatus nmpu_perf_compare(const char *a,
                                  const char *b,
                                  uint64_t n_outputs,
                                  double *speedup,
                                  double *area_ratio);

/*
 Fraction of samples with error at least 0.5 for all 15 architectures in
 M1-S1, M1-S2, ..., M5-S3 order. `baseline` 0 compares against the 8-bit
 software output, 1 against the real-valued reference.

 # Safety
 `fractions` must point to `cap` writable doubles.
 */
enum NmpuStatus nmpu_explore(size_t n,
                             uint64_t seed,
                             double gain,
                             uint8_t baseline,
                             double *fractions,
                             size_t cap);

/*
 Generates a synthetic ADC population.

 # Safety
 `out` must be a valid pointer.
 */
enum NmpuStatus nmpu_adc_new(size_t n,
                             double cv_target,
                             double nonlinearity,
                             uint64_t seed,
                             struct NmpuAdcHandle **out);

/*
 # Safety
 `handle` must be null or a live pointer from [`nmpu_adc_new`].
 */
void nmpu_adc_free(struct NmpuAdcHandle *handle);

/*
 Number of converters in the population, 0 for a null handle.

 # Safety
 `handle` must be null or live.
 */
size_t nmpu_adc_len(const struct NmpuAdcHandle *handle);

/*
 Converts a normalized current through converter `index`.

 # Safety
 `handle` must be live and `count` a valid pointer.
 */
enum NmpuStatus nmpu_adc_convert(const struct NmpuAdcHandle *handle,
                                 size_t index,
                                 double current,
                                 uint16_t *count);

/*
 Aggregate CV before correction, after real-valued correction and after
 register-quantized correction.

 # Safety
 `handle` must be live; the three outputs valid pointers.
 */
enum NmpuStatus nmpu_adc_cv(const struct NmpuAdcHandle *handle,
                            double *cv_before,
                            double *cv_real,
                            double *cv_quantized);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NMPU_SIM_H */
