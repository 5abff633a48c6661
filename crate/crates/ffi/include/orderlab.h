#ifndef ORDERLAB_H
#define ORDERLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum OlStatus {
  OL_STATUS_OK = 0,
  OL_STATUS_NULL_POINTER = 1,
  OL_STATUS_INVALID_ARGUMENT = 2,
  OL_STATUS_DIMENSION = 3,
  OL_STATUS_IO = 4,
  OL_STATUS_PARSE = 5,
  OL_STATUS_CAPACITY = 6,
  OL_STATUS_PANIC = 7,
} OlStatus;

/**
 * Which entries the orderedness denominator sums.
 */
typedef enum OlMassScope {
  /**
   * Neuron-to-neuron block only.
   */
  OL_MASS_SCOPE_RECURRENT = 0,
  /**
   * Every entry, input columns included.
   */
  OL_MASS_SCOPE_FULL = 1,
} OlMassScope;

/**
 * Opaque layer handle.
 */
typedef struct OlLayer OlLayer;

/**
 * Summary of one training run.
 */
typedef struct OlRunSummary {
  /**
   * NaN when the run diverged.
   */
  double final_loss;
  double o_pre;
  /**
   * NaN when the run diverged.
   */
  double o_post;
  /**
   * NaN when the run diverged.
   */
  double delta_o;
  size_t steps_run;
  bool diverged;
} OlRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ol_version(void);

/**
 * Message of the last failed call on this thread, or NULL if the last call
 * succeeded. Valid until the next call into this library on the same thread.
 */
const char *ol_last_error_message(void);

/**
 * Creates a layer with normally initialised weights and values, seeded as in
 * training runs. The handle must be released with `ol_layer_free`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum OlStatus ol_layer_new(size_t outputs,
                           size_t hidden,
                           size_t inputs,
                           size_t iters,
                           bool bias,
                           uint64_t seed,
                           struct OlLayer **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `layer` must be NULL or a handle from this library not yet freed.
 */
void ol_layer_free(struct OlLayer *layer);

/**
 * Writes `{outputs, hidden, inputs, iters}` into `shape_out`.
 *
 * # Safety
 * `layer` must be a live handle and `shape_out` must point to 4 writable `size_t`.
 */
enum OlStatus ol_layer_shape(const struct OlLayer *layer, size_t *shape_out);

/**
 * Runs the layer on `batch` rows of `x` (row-major, `batch × inputs`) and
 * writes `batch × outputs` values to `out`.
 *
 * # Safety
 * `x` must hold `batch × inputs` doubles and `out` must hold `out_len` doubles.
 */
enum OlStatus ol_layer_forward(const struct OlLayer *layer,
                               const double *x,
                               size_t batch,
                               double *out,
                               size_t out_len);

/**
 * Copies the effective (masked) weights, `(o+h) × (o+h+i)` row-major.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum OlStatus ol_layer_weights(const struct OlLayer *layer, double *out, size_t len);

/**
 * Replaces the weights; the mask is reset to all ones.
 *
 * # Safety
 * `layer` must be a live handle and `w` must hold `len` doubles.
 */
enum OlStatus ol_layer_set_weights(struct OlLayer *layer, const double *w, size_t len);

/**
 * Orderedness of the layer's effective weights. When `perm_out` is not NULL
 * the optimal hidden ordering is written there (`perm_len` ≥ hidden).
 *
 * # Safety
 * `o_out` must be writable; `perm_out` must be NULL or hold `perm_len` entries.
 */
enum OlStatus ol_layer_orderedness(const struct OlLayer *layer,
                                   enum OlMassScope scope,
                                   double *o_out,
                                   size_t *perm_out,
                                   size_t perm_len);

/**
 * Orderedness of a dense `(o+h) × (o+h+i)` row-major matrix.
 *
 * # Safety
 * `w` must hold `(o+h)(o+h+i)` doubles and `o_out` must be writable.
 */
enum OlStatus ol_orderedness_dense(const double *w,
                                   size_t outputs,
                                   size_t hidden,
                                   size_t inputs,
                                   enum OlMassScope scope,
                                   double *o_out);

/**
 * Loads a checkpoint written by `ol_layer_save_checkpoint` or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum OlStatus ol_layer_load_checkpoint(const char *path, struct OlLayer **out);

/**
 * # Safety
 * `layer` must be a live handle and `path` a NUL-terminated string.
 */
enum OlStatus ol_layer_save_checkpoint(const struct OlLayer *layer, const char *path);

/**
 * Kept fraction of dynamic top-k at progress `x ∈ [0, 1]`; NaN if `x` is out of range.
 */
double ol_dyn_topk_fraction(double k, double x);

/**
 * Damping factor of dynamic tril-damp at progress `x ∈ [0, 1]`; NaN if `x` is out of range.
 */
double ol_dyn_tril_fraction(double f, double x);

/**
 * Trains a layer with the task defaults, overriding the pruning spec (e.g.
 * `"dyntopk:0.5"`), the seed and, when nonzero, the step count. When
 * `layer_out` is not NULL it receives the trained layer.
 *
 * # Safety
 * `task` and `prune` must be NUL-terminated strings; `summary` writable;
 * `layer_out` NULL or writable.
 */
enum OlStatus ol_train(const char *task,
                       const char *prune,
                       uint64_t seed,
                       size_t steps,
                       struct OlRunSummary *summary,
                       struct OlLayer **layer_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ORDERLAB_H */
