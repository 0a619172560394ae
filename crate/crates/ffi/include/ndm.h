#ifndef NDM_H
#define NDM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NdmStatus {
  NDM_STATUS_OK = 0,
  NDM_STATUS_NULL_POINTER = 1,
  NDM_STATUS_INVALID_ARGUMENT = 2,
  NDM_STATUS_SHAPE_MISMATCH = 3,
  NDM_STATUS_OUT_OF_RANGE = 4,
  NDM_STATUS_NO_EFFECT = 5,
  NDM_STATUS_NOT_ORTHOGONAL = 6,
  NDM_STATUS_INSUFFICIENT_SAMPLES = 7,
  NDM_STATUS_IO = 8,
  NDM_STATUS_MALFORMED = 9,
  NDM_STATUS_PANIC = 10,
} NdmStatus;

/**
 * Opaque partition handle.
 */
typedef struct NdmPartition NdmPartition;

typedef struct NdmGiniReport {
  double raw;
  double per_dim;
  double per_var;
  /**
   * Negative effects clamped to zero.
   */
  size_t clamped;
  /**
   * Zero-variance subspaces left out of `per_var`.
   */
  size_t excluded;
} NdmGiniReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *ndm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ndm_version(void);

/**
 * Builds a partition from a row-major `d × d` orthogonal `r` and `s`
 * subspace dimensions summing to `d`.
 *
 * # Safety
 * `r` must hold `d * d` doubles, `dims` `s` sizes, and `out` be writable.
 */
enum NdmStatus ndm_partition_new(const double *r,
                                 size_t d,
                                 const size_t *dims,
                                 size_t s,
                                 struct NdmPartition **out);

/**
 * Loads a partition file.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` writable.
 */
enum NdmStatus ndm_partition_load(const char *path, struct NdmPartition **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `p` must come from this library and not be used afterwards.
 */
void ndm_partition_free(struct NdmPartition *p);

/**
 * Ambient dimension `d` and number of subspaces `s`.
 *
 * # Safety
 * `p` must be a live handle; `d` and `s` writable.
 */
enum NdmStatus ndm_partition_shape(const struct NdmPartition *p, size_t *d, size_t *s);

/**
 * Copies the `s` subspace dimensions into `dims`.
 *
 * # Safety
 * `dims` must have room for `len` values.
 */
enum NdmStatus ndm_partition_dims(const struct NdmPartition *p, size_t *dims, size_t len);

/**
 * Copies `R` (row-major, `d * d` values) into `r`.
 *
 * # Safety
 * `r` must have room for `len` doubles.
 */
enum NdmStatus ndm_partition_rotation(const struct NdmPartition *p, double *r, size_t len);

/**
 * `Rᵀ · replace_block(R h_cln, s ← block_s(R h_crp))` into `out`; all
 * vectors have length `d`.
 *
 * # Safety
 * `h_cln`, `h_crp` and `out` must each hold `d` doubles.
 */
enum NdmStatus ndm_patch_compose(const struct NdmPartition *p,
                                 const double *h_cln,
                                 const double *h_crp,
                                 size_t d,
                                 size_t s,
                                 double *out);

/**
 * Gini coefficient of `n` effects; negatives are clamped to zero and
 * counted in `clamped` (may be null).
 *
 * # Safety
 * `effects` must hold `n` doubles and `value` be writable.
 */
enum NdmStatus ndm_gini(const double *effects, size_t n, double *value, size_t *clamped);

/**
 * Gini over effects, effects per dimension, and effects per variance.
 *
 * # Safety
 * `effects`, `dims` and `variances` must each hold `n` values.
 */
enum NdmStatus ndm_gini_report(const double *effects,
                               const size_t *dims,
                               const double *variances,
                               size_t n,
                               struct NdmGiniReport *out);

/**
 * KSG mutual information (nats, clamped at 0) between `x` (`n × dx`) and
 * `y` (`n × dy`), both row-major.
 *
 * # Safety
 * `x` and `y` must hold `n * dx` and `n * dy` doubles.
 */
enum NdmStatus ndm_ksg_mi(const double *x,
                          size_t dx,
                          const double *y,
                          size_t dy,
                          size_t n,
                          size_t k,
                          double *out);

/**
 * Normalized pairwise MI between the partition's subspaces over `n`
 * activations (`n × d`, row-major), written as an `s × s` row-major grid.
 *
 * # Safety
 * `data` must hold `n * d` doubles and `out` `len` doubles.
 */
enum NdmStatus ndm_partition_mi(const struct NdmPartition *p,
                                const double *data,
                                size_t n,
                                size_t k,
                                double *out,
                                size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NDM_H */
