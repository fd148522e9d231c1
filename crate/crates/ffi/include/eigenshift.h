#ifndef EIGENSHIFT_H
#define EIGENSHIFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EsStatus {
  ES_STATUS_OK = 0,
  ES_STATUS_NULL_POINTER = 1,
  ES_STATUS_INVALID_ARGUMENT = 2,
  ES_STATUS_DIMENSION_MISMATCH = 3,
  ES_STATUS_INDEX_OUT_OF_RANGE = 4,
  ES_STATUS_NON_CONVERGENCE = 5,
  ES_STATUS_IO = 6,
  ES_STATUS_PARSE = 7,
  ES_STATUS_NON_POSITIVE = 8,
  ES_STATUS_PANIC = 9,
} EsStatus;

typedef enum EsDkMode {
  /**
   * `2√2 ‖E‖₂ / g_I`.
   */
  ES_DK_MODE_HS = 0,
  /**
   * `2√2 √|I| ‖E‖_∞ / g_I`.
   */
  ES_DK_MODE_OP = 1,
} EsDkMode;

/**
 * Symmetric matrix handle.
 */
typedef struct EsMatrix EsMatrix;

/**
 * Handle for an unperturbed/perturbed pair with both decompositions.
 */
typedef struct EsPerturbedPair EsPerturbedPair;

/**
 * Eigendecomposition handle.
 */
typedef struct EsSpectralModel EsSpectralModel;

/**
 * A bound on the squared Hilbert–Schmidt distance and its gate.
 */
typedef struct EsCertificate {
  double bound;
  double condition;
  double threshold;
  bool applicable;
} EsCertificate;

typedef struct EsFirstOrder {
  /**
   * Squared Hilbert–Schmidt norm of the linear term.
   */
  double linear_hs_sq;
  /**
   * Operator-norm bound on the remainder (`+inf` once `delta ≥ 1`).
   */
  double remainder_bound;
  double delta;
} EsFirstOrder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *es_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *es_version(void);

/**
 * Creates a `p × p` symmetric matrix from row-major `data`. Entries whose
 * mirror differs by more than `1e-9` of the largest entry are rejected.
 *
 * # Safety
 * `data` must point to `p * p` readable doubles; `out` must be writable.
 */
enum EsStatus es_matrix_new(size_t p, const double *data, struct EsMatrix **out);

/**
 * Reads a matrix file: a line holding `p`, then `p` rows of `p`
 * whitespace-separated decimals.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EsStatus es_matrix_from_file(const char *path, struct EsMatrix **out);

/**
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum EsStatus es_matrix_dim(const struct EsMatrix *m, size_t *out);

/**
 * # Safety
 * `m` must be null or a handle from this library, not yet freed.
 */
void es_matrix_free(struct EsMatrix *m);

/**
 * Eigendecomposition with eigenvalues in non-increasing order.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum EsStatus es_model_decompose(const struct EsMatrix *m, struct EsSpectralModel **out);

/**
 * Copies the eigenvalues into `buf`, which must hold at least the dimension.
 *
 * # Safety
 * `model` must be a live handle; `buf` must hold `len` writable doubles.
 */
enum EsStatus es_model_eigenvalues(const struct EsSpectralModel *model, double *buf, size_t len);

/**
 * # Safety
 * `model` must be null or a handle from this library, not yet freed.
 */
void es_model_free(struct EsSpectralModel *model);

/**
 * Pairs `sigma` with `sigma_hat` (copies both).
 *
 * # Safety
 * Both matrices must be live handles; `out` must be writable.
 */
enum EsStatus es_pair_new(const struct EsMatrix *sigma,
                          const struct EsMatrix *sigma_hat,
                          struct EsPerturbedPair **out);

/**
 * # Safety
 * `pair` must be null or a handle from this library, not yet freed.
 */
void es_pair_free(struct EsPerturbedPair *pair);

/**
 * `‖P̂_I − P_I‖₂²`.
 *
 * # Safety
 * `pair` must be live; `set` must hold `len` indices; `out` must be writable.
 */
enum EsStatus es_hs_distance_sq(const struct EsPerturbedPair *pair,
                                const size_t *set,
                                size_t len,
                                double *out);

/**
 * Relative rank of `I` for the unperturbed spectrum.
 *
 * # Safety
 * `pair` must be live; `set` must hold `len` indices; `out` must be writable.
 */
enum EsStatus es_relative_rank(const struct EsPerturbedPair *pair,
                               const size_t *set,
                               size_t len,
                               double *out);

/**
 * Davis–Kahan bound on `‖P̂_I − P_I‖₂` (`+inf` on a zero gap).
 *
 * # Safety
 * `pair` must be live; `set` must hold `len` indices; `out` must be writable.
 */
enum EsStatus es_davis_kahan(const struct EsPerturbedPair *pair,
                             const size_t *set,
                             size_t len,
                             enum EsDkMode mode,
                             double *out);

/**
 * Theorem 2 certificate with the least valid `x` measured from the pair.
 *
 * # Safety
 * `pair` must be live; `set` must hold `len` indices; `out` must be writable.
 */
enum EsStatus es_theorem2(const struct EsPerturbedPair *pair,
                          const size_t *set,
                          size_t len,
                          struct EsCertificate *out);

/**
 * Theorem 3 certificate with the minimal superset `I′` and measured block `x`.
 *
 * # Safety
 * `pair` must be live; `set` must hold `len` indices; `out` must be writable.
 */
enum EsStatus es_theorem3(const struct EsPerturbedPair *pair,
                          const size_t *set,
                          size_t len,
                          struct EsCertificate *out);

/**
 * First-order term summary for `I`.
 *
 * # Safety
 * `pair` must be live; `set` must hold `len` indices; `out` must be writable.
 */
enum EsStatus es_first_order(const struct EsPerturbedPair *pair,
                             const size_t *set,
                             size_t len,
                             struct EsFirstOrder *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EIGENSHIFT_H */
