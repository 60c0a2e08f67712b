#ifndef MTL_FFI_H
#define MTL_FFI_H

/* Generated by cbindgen from mtl-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/* Opaque handles; created and freed only through the functions below. */
typedef struct MtlNet MtlNet;
typedef struct MtlConfig MtlConfig;
typedef struct MtlSuiteOutput MtlSuiteOutput;

/**
 * Status code returned by every fallible entry point; `Ok` is 0.
 */
typedef enum MtlStatus {
  MTL_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  MTL_STATUS_NULL_POINTER = 1,
  MTL_STATUS_INVALID_ARGUMENT = 2,
  MTL_STATUS_SHAPE_MISMATCH = 3,
  /**
   * UW-O weighting was handed a non-positive loss.
   */
  MTL_STATUS_NON_POSITIVE_LOSS = 4,
  /**
   * Configuration text was rejected.
   */
  MTL_STATUS_CONFIG = 5,
  MTL_STATUS_IO = 6,
  /**
   * Config or JSON text failed to parse.
   */
  MTL_STATUS_PARSE = 7,
  /**
   * The requested quantity is undefined for these inputs (e.g. cosine
   * similarity of a zero vector). No error message is set.
   */
  MTL_STATUS_UNDEFINED = 8,
  /**
   * A panic was caught at the boundary.
   */
  MTL_STATUS_PANIC = 9,
} MtlStatus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mtl_version(void);

/**
 * Length in bytes (including the trailing NUL) of the last error message on
 * this thread; 0 when no error has occurred yet.
 */
size_t mtl_last_error_length(void);

/**
 * Copy the last error message on this thread into `buf` (NUL-terminated).
 * Returns the number of bytes copied excluding the NUL, or -1 if `buf` is
 * NULL or `cap` is too small.
 */
int mtl_last_error_message(char *buf, size_t cap);

/**
 * Per-task losses at (x1, x2); `out` receives 2 values.
 */
enum MtlStatus mtl_landscape_losses(double x1, double x2, double *out);

/**
 * Per-task gradients at (x1, x2); `out` receives 4 values, row-major by
 * task: [dL1/dx1, dL1/dx2, dL2/dx1, dL2/dx2].
 */
enum MtlStatus mtl_landscape_grads(double x1, double x2, double *out);

/**
 * Mean of the two task losses at (x1, x2).
 */
enum MtlStatus mtl_landscape_avg_loss(double x1, double x2, double *out);

/**
 * Euclidean distance from (x1, x2) to the global minimum.
 */
enum MtlStatus mtl_landscape_dist_to_min(double x1, double x2, double *out);

/**
 * Cosine similarity of two equal-length vectors. Returns
 * `MTL_STATUS_UNDEFINED` (without touching `out`) when either vector is
 * zero.
 */
enum MtlStatus mtl_cos_similarity(const double *g, const double *h, size_t len, double *out);

/**
 * Magnitude similarity 2|g||h| / (|g|^2 + |h|^2); `MTL_STATUS_UNDEFINED`
 * when both vectors are zero.
 */
enum MtlStatus mtl_mag_similarity(const double *g, const double *h, size_t len, double *out);

/**
 * Fraction of coordinates on which the two gradients disagree in sign.
 */
enum MtlStatus mtl_conflict_ratio(const double *g, const double *h, size_t len, double *out);

/**
 * Plain dot product of two equal-length vectors.
 */
enum MtlStatus mtl_dot_product(const double *g, const double *h, size_t len, double *out);

/**
 * Average percentage drop across tasks relative to `baseline`;
 * `higher_better[t]` is nonzero when larger metric values are better for
 * task t. Negative means the method improves on the baseline.
 */
enum MtlStatus mtl_delta_m(const double *method,
                           const double *baseline,
                           const uint8_t *higher_better,
                           size_t n_tasks,
                           double *out);

/**
 * Robustness gap: mean over corruption cells of the normalized MTL drop
 * minus the normalized STL drop, oriented so positive means the MTL model
 * degrades more.
 */
enum MtlStatus mtl_delta_t(double mtl_clean,
                           double stl_clean,
                           const double *mtl_corrupted,
                           const double *stl_corrupted,
                           size_t n_cells,
                           uint8_t higher_better,
                           double *out);

/**
 * Indices of the Pareto-optimal rows of an `n_records` x `n_metrics`
 * row-major matrix. `out_indices` must hold `n_records` entries; the number
 * actually written goes to `out_len`.
 */
enum MtlStatus mtl_pareto_front(const double *records,
                                size_t n_records,
                                size_t n_metrics,
                                const uint8_t *higher_better,
                                size_t *out_indices,
                                size_t *out_len);

/**
 * PCGrad over `n_tasks` row-major gradients of length `len`; `out` receives
 * the summed surgered gradient. `seed` drives the projection order shuffle.
 */
enum MtlStatus mtl_pcgrad(const double *grads,
                          size_t n_tasks,
                          size_t len,
                          uint64_t seed,
                          double *out);

/**
 * CAGrad direction for `n_tasks` row-major gradients. `out_direction`
 * receives `len` values; `out_weights` (length `n_tasks`), `out_objective`
 * and `out_fell_back` may each be NULL when not wanted.
 */
enum MtlStatus mtl_cagrad(const double *grads,
                          size_t n_tasks,
                          size_t len,
                          double c,
                          double *out_direction,
                          double *out_weights,
                          double *out_objective,
                          int *out_fell_back);

/**
 * Build a shared-backbone network. `backbone` lists layer widths starting
 * at the input dimension; `head_widths` concatenates every head's width
 * chain and `head_lens[t]` gives head t's chain length (each chain starts
 * at the backbone output width). Initialization is seeded uniform.
 */
enum MtlStatus mtl_net_new(const size_t *backbone,
                           size_t backbone_len,
                           const size_t *head_widths,
                           size_t head_widths_len,
                           const size_t *head_lens,
                           size_t n_heads,
                           double slope,
                           uint64_t seed,
                           MtlNet **out);

/**
 * Free a network handle; NULL is ignored.
 */
void mtl_net_free(MtlNet *net);

/**
 * Total number of parameters.
 */
enum MtlStatus mtl_net_n_params(const MtlNet *net, size_t *out);

/**
 * Number of task heads.
 */
enum MtlStatus mtl_net_n_tasks(const MtlNet *net, size_t *out);

/**
 * Output width of `task`'s head.
 */
enum MtlStatus mtl_net_head_width(const MtlNet *net, size_t task, size_t *out);

/**
 * Copy the flat parameter vector into `buf` (`len` must equal the value
 * from `mtl_net_n_params`).
 */
enum MtlStatus mtl_net_get_params(const MtlNet *net, double *buf, size_t len);

/**
 * Replace the flat parameter vector.
 */
enum MtlStatus mtl_net_set_params(MtlNet *net, const double *buf, size_t len);

/**
 * Forward `x` (length = input dimension) through the backbone and `task`'s
 * head; `out` must hold that head's output width.
 */
enum MtlStatus mtl_net_predict(const MtlNet *net,
                               const double *x,
                               size_t x_len,
                               size_t task,
                               double *out,
                               size_t out_len);

/**
 * Parse flat `key = value` configuration text (as accepted by the mtl-lab
 * CLI) into a handle.
 */
enum MtlStatus mtl_config_parse(const char *text, MtlConfig **out);

/**
 * Free a configuration handle; NULL is ignored.
 */
void mtl_config_free(MtlConfig *cfg);

/**
 * SHA-256 content hash of the effective configuration (64 hex chars; `cap`
 * must be at least 65).
 */
enum MtlStatus mtl_config_hash(const MtlConfig *cfg, char *buf, size_t cap);

/**
 * Name of the suite this configuration selects ("landscape", "invariance",
 * "gradsim", "synth-mtl", or "ood").
 */
enum MtlStatus mtl_config_suite_name(const MtlConfig *cfg, char *buf, size_t cap);

/**
 * Run the configured suite end to end, writing its CSV/JSON outputs to the
 * configured directory. On success `out` receives a listing handle.
 */
enum MtlStatus mtl_run_suite(const MtlConfig *cfg, MtlSuiteOutput **out);

/**
 * Free a suite-output handle; NULL is ignored.
 */
void mtl_suite_output_free(MtlSuiteOutput *output);

/**
 * Directory the suite wrote into.
 */
enum MtlStatus mtl_suite_output_dir(const MtlSuiteOutput *output, char *buf, size_t cap);

/**
 * Number of files the suite wrote.
 */
enum MtlStatus mtl_suite_output_n_files(const MtlSuiteOutput *output, size_t *out);

/**
 * Path (relative to the output directory) of file `index`.
 */
enum MtlStatus mtl_suite_output_file(const MtlSuiteOutput *output,
                                     size_t index,
                                     char *buf,
                                     size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTL_FFI_H */
