#ifndef TSK_H
#define TSK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TskKernelFamily {
  TSK_KERNEL_FAMILY_PRESENCE = 0,
  TSK_KERNEL_FAMILY_INTERSECTION = 1,
  TSK_KERNEL_FAMILY_SPECTRUM = 2,
} TskKernelFamily;

typedef enum TskStage {
  TSK_STAGE_RAW = 0,
  TSK_STAGE_NORMALIZED = 1,
  TSK_STAGE_RBF = 2,
  TSK_STAGE_TRANSDUCTIVE = 3,
} TskStage;

/**
 * Status codes returned by every fallible call.
 */
typedef enum TskStatus {
  TSK_STATUS_OK = 0,
  TSK_STATUS_NULL_POINTER = 1,
  TSK_STATUS_INVALID_ARGUMENT = 2,
  TSK_STATUS_UTF8 = 3,
  TSK_STATUS_IO = 4,
  TSK_STATUS_FORMAT = 5,
  TSK_STATUS_NUMERICAL = 6,
  TSK_STATUS_OUT_OF_RANGE = 7,
  TSK_STATUS_PANIC = 8,
} TskStatus;

/**
 * Opaque kernel matrix.
 */
typedef struct TskMatrix TskMatrix;

/**
 * Opaque classifier trace.
 */
typedef struct TskTrace TskTrace;

typedef struct TskKernelConfig {
  enum TskKernelFamily family;
  size_t p_min;
  size_t p_max;
  bool lowercase;
} TskKernelConfig;

typedef struct TskMcNemar {
  uint64_t b;
  uint64_t c;
  double statistic;
  double p_value;
  bool significant;
  /**
   * 0 = continuity-corrected chi-squared, 1 = exact binomial.
   */
  bool exact;
} TskMcNemar;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *tsk_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tsk_version(void);

/**
 * The default configuration: presence kernel, n-grams of length 5 to 8, lowercased.
 */
struct TskKernelConfig tsk_kernel_config_default(void);

/**
 * Blended string kernel between two NUL-terminated UTF-8 texts.
 */
enum TskStatus tsk_kernel_value(const char *a,
                                const char *b,
                                const struct TskKernelConfig *config,
                                double *out);

/**
 * Builds the raw kernel matrix over `train` followed by `test`.
 * Free the result with [`tsk_matrix_free`].
 */
enum TskStatus tsk_matrix_build(const char *const *train,
                                size_t m,
                                const char *const *test,
                                size_t n,
                                const struct TskKernelConfig *config,
                                struct TskMatrix **out);

/**
 * Applies the remaining transforms until the matrix reaches `stage`.
 */
enum TskStatus tsk_matrix_advance(struct TskMatrix *matrix, enum TskStage stage);

/**
 * Writes `m`, `n` and the current stage. Any output pointer may be NULL.
 */
enum TskStatus tsk_matrix_info(const struct TskMatrix *matrix,
                               size_t *m,
                               size_t *n,
                               enum TskStage *stage);

enum TskStatus tsk_matrix_get(const struct TskMatrix *matrix, size_t i, size_t j, double *out);

/**
 * Copies all `(m+n)^2` values, row-major, into `buf` of capacity `len`.
 */
enum TskStatus tsk_matrix_copy(const struct TskMatrix *matrix, double *buf, size_t len);

enum TskStatus tsk_matrix_save(const struct TskMatrix *matrix, const char *path);

enum TskStatus tsk_matrix_load(const char *path, struct TskMatrix **out);

void tsk_matrix_free(struct TskMatrix *matrix);

/**
 * Runs the classifier on a transductive-stage matrix. `train_labels` holds
 * `m` labels in `1..=classes`. With `two_rounds` false only the first round
 * runs. Free the trace with [`tsk_trace_free`].
 */
enum TskStatus tsk_classify(const struct TskMatrix *matrix,
                            const uint32_t *train_labels,
                            size_t m,
                            uint32_t classes,
                            size_t r,
                            double lambda,
                            bool two_rounds,
                            struct TskTrace **out);

/**
 * Number of test samples covered by the trace.
 */
size_t tsk_trace_len(const struct TskTrace *trace);

/**
 * Copies per-test-sample results into caller buffers of length `len`
 * (which must equal [`tsk_trace_len`]). Any buffer may be NULL.
 */
enum TskStatus tsk_trace_read(const struct TskTrace *trace,
                              size_t len,
                              uint32_t *final_labels,
                              uint32_t *round1_labels,
                              double *round1_scores,
                              bool *promoted);

void tsk_trace_free(struct TskTrace *trace);

/**
 * McNemar's test of classifier A against B on `len` paired predictions.
 */
enum TskStatus tsk_mcnemar(const uint32_t *pred_a,
                           const uint32_t *pred_b,
                           const uint32_t *gold,
                           size_t len,
                           struct TskMcNemar *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSK_H */
