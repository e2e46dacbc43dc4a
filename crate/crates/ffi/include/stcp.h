#ifndef STCP_H
#define STCP_H

#pragma once

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StcpMethod {
  STCP_METHOD_AER = 0,
  STCP_METHOD_STD = 1,
  STCP_METHOD_CQR = 2,
} StcpMethod;

typedef enum StcpStatus {
  STCP_STATUS_OK = 0,
  STCP_STATUS_NULL_POINTER = 1,
  STCP_STATUS_CONFIG = 2,
  STCP_STATUS_DATA = 3,
  STCP_STATUS_SHAPE = 4,
  STCP_STATUS_FORMAT = 5,
  STCP_STATUS_IO = 6,
  STCP_STATUS_DIVERGENCE = 7,
  STCP_STATUS_BUFFER_SIZE = 8,
  STCP_STATUS_PANIC = 9,
} StcpStatus;

/**
 * Lower and upper band edges, same layout as the stack they were built on.
 */
typedef struct StcpBand StcpBand;

/**
 * Per-cell conformal quantile.
 */
typedef struct StcpQuantile StcpQuantile;

/**
 * Stack of `n` samples of a `[T, Nx, Ny, V]` field, row-major per sample.
 */
typedef struct StcpStack StcpStack;

typedef struct StcpCoverage {
  double mean_coverage;
  double min_cell_coverage;
  double max_cell_coverage;
  /**
   * Mean width over finite cells.
   */
  double tightness;
  size_t n_infinite;
  size_t n_cal;
  size_t n_val;
  /**
   * Central interval of the coverage law; valid when `has_beta`.
   */
  double beta_lo;
  double beta_hi;
  bool has_beta;
} StcpCoverage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next `stcp_*` call on the same thread.
 */
const char *stcp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *stcp_version(void);

/**
 * Copy `len` values into a new stack of samples with dims `[t, nx, ny, nvar]`.
 * `len` must be a positive multiple of `t * nx * ny * nvar`.
 *
 * # Safety
 * `data` must point to `len` readable doubles and `out` must be writable.
 */
enum StcpStatus stcp_stack_new(size_t t,
                               size_t nx,
                               size_t ny,
                               size_t nvar,
                               const double *data,
                               size_t len,
                               struct StcpStack **out);

/**
 * # Safety
 * `stack` must be null or a handle from `stcp_stack_new` not yet freed.
 */
void stcp_stack_free(struct StcpStack *stack);

/**
 * Number of samples, or 0 for a null handle.
 *
 * # Safety
 * `stack` must be null or a live handle.
 */
size_t stcp_stack_n_samples(const struct StcpStack *stack);

/**
 * Cells per sample, or 0 for a null handle.
 *
 * # Safety
 * `stack` must be null or a live handle.
 */
size_t stcp_stack_cells(const struct StcpStack *stack);

/**
 * Calibrate at miscoverage `alpha` from calibration predictions and truth.
 * `a` is the point prediction (AER), the MC mean (STD) or the lower
 * quantile (CQR); `b` is the MC std (STD) or the upper quantile (CQR) and
 * is ignored for AER.
 *
 * # Safety
 * Stack arguments must be live handles (`b` may be null for AER) and
 * `out` must be writable.
 */
enum StcpStatus stcp_calibrate(enum StcpMethod method,
                               const struct StcpStack *a,
                               const struct StcpStack *b,
                               const struct StcpStack *truth,
                               double alpha,
                               struct StcpQuantile **out);

/**
 * # Safety
 * `q` must be null or a handle from `stcp_calibrate` not yet freed.
 */
void stcp_quantile_free(struct StcpQuantile *q);

/**
 * Number of cells in the quantile field, or 0 for a null handle.
 *
 * # Safety
 * `q` must be null or a live handle.
 */
size_t stcp_quantile_len(const struct StcpQuantile *q);

/**
 * Copy the quantile field into `buf`; `len` must equal `stcp_quantile_len`.
 * Cells whose rank overflowed hold `+INFINITY`.
 *
 * # Safety
 * `q` must be a live handle and `buf` must hold `len` writable doubles.
 */
enum StcpStatus stcp_quantile_values(const struct StcpQuantile *q, double *buf, size_t len);

/**
 * Build the calibrated band for new predictions `a`/`b` (same roles as in
 * `stcp_calibrate`).
 *
 * # Safety
 * Arguments must be live handles (`b` may be null for AER) and `out` must
 * be writable.
 */
enum StcpStatus stcp_band_build(const struct StcpQuantile *q,
                                enum StcpMethod method,
                                const struct StcpStack *a,
                                const struct StcpStack *b,
                                struct StcpBand **out);

/**
 * # Safety
 * `band` must be null or a handle from `stcp_band_build` not yet freed.
 */
void stcp_band_free(struct StcpBand *band);

/**
 * Values per edge (samples times cells), or 0 for a null handle.
 *
 * # Safety
 * `band` must be null or a live handle.
 */
size_t stcp_band_len(const struct StcpBand *band);

/**
 * Copy both edges; each buffer holds `len == stcp_band_len(band)` doubles.
 *
 * # Safety
 * `band` must be a live handle; `lower` and `upper` must each hold `len`
 * writable doubles.
 */
enum StcpStatus stcp_band_edges(const struct StcpBand *band,
                                double *lower,
                                double *upper,
                                size_t len);

/**
 * Empirical coverage of `band` on `truth`.
 *
 * # Safety
 * `band` and `truth` must be live handles and `out` writable.
 */
enum StcpStatus stcp_coverage(const struct StcpBand *band,
                              const struct StcpStack *truth,
                              struct StcpCoverage *out);

/**
 * Central `mass` interval of the coverage law after calibrating on
 * `n_cal` points at miscoverage `alpha`.
 *
 * # Safety
 * `lo` and `hi` must be writable.
 */
enum StcpStatus stcp_coverage_interval(size_t n_cal,
                                       double alpha,
                                       double mass,
                                       double *lo,
                                       double *hi);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STCP_H */
