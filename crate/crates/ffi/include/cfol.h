#ifndef CFOL_H
#define CFOL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  CFOL_STATUS_OK = 0,
  CFOL_STATUS_NULL_POINTER = 1,
  CFOL_STATUS_INVALID_ARGUMENT = 2,
  CFOL_STATUS_INVALID_CONFIG = 3,
  CFOL_STATUS_OUT_OF_RANGE = 4,
  CFOL_STATUS_BUFFER_TOO_SMALL = 5,
  CFOL_STATUS_IO = 6,
  CFOL_STATUS_PARSE = 7,
  CFOL_STATUS_RUNTIME = 8,
  CFOL_STATUS_PANIC = 9,
} CfolStatus;

/**
 * Exp3 class adversary with its own sampling stream.
 */
typedef struct CfolAdversary CfolAdversary;

typedef struct CfolDataset CfolDataset;

typedef struct CfolModel CfolModel;

typedef struct CfolTrainResult CfolTrainResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * NUL-terminated library version; static storage.
 */
const char *cfol_version(void);

/**
 * Message of the last failed call on this thread (empty after a success).
 */
CfolStatus cfol_last_error(char *buf, size_t len, size_t *needed);

CfolStatus cfol_adversary_new(size_t arms,
                              double eta,
                              double gamma,
                              uint64_t seed,
                              CfolAdversary **out);

void cfol_adversary_free(CfolAdversary *adversary);

CfolStatus cfol_adversary_num_arms(const CfolAdversary *adversary, size_t *out);

/**
 * Draws an arm from the mixed distribution `p`.
 */
CfolStatus cfol_adversary_sample(CfolAdversary *adversary, size_t *out_arm);

/**
 * Feeds the loss in `[0, 1]` observed at `arm` (drawn from the current `p`).
 */
CfolStatus cfol_adversary_update(CfolAdversary *adversary, size_t arm, double loss);

/**
 * Copies the sampling distribution `p` into `out[0..num_arms]`.
 */
CfolStatus cfol_adversary_probabilities(const CfolAdversary *adversary, double *out, size_t len);

CfolStatus cfol_theoretical_eta(size_t k, double mistake_bound, double *out);

CfolStatus cfol_alpha_from_gamma(double gamma, size_t m, double *out);

CfolStatus cfol_theorem_bound(double mistake_bound,
                              size_t k,
                              uint64_t steps,
                              size_t ensemble,
                              double delta,
                              double *out);

/**
 * CVaR at level `alpha` of `losses[0..len]`; the maximizing weights go to
 * `out_weights[0..len]`.
 */
CfolStatus cfol_cvar(const double *losses,
                     size_t len,
                     double alpha,
                     double *out_weights,
                     double *out_value);

/**
 * Dataset from a row-major `n x d` feature matrix and labels in `[0, k)`.
 */
CfolStatus cfol_dataset_new(const double *features,
                            const uint32_t *labels,
                            size_t n,
                            size_t d,
                            size_t k,
                            CfolDataset **out);

void cfol_dataset_free(CfolDataset *dataset);

/**
 * Trains with a JSON run config (same schema as the `run` section of an
 * experiment file).
 */
CfolStatus cfol_train(const char *config_json, const CfolDataset *dataset, CfolTrainResult **out);

void cfol_train_result_free(CfolTrainResult *result);

/**
 * The `metrics.json` document of a run, NUL-terminated.
 */
CfolStatus cfol_train_result_metrics_json(const CfolTrainResult *result,
                                          char *buf,
                                          size_t len,
                                          size_t *needed);

/**
 * Copies out the final (`early_stopped == 0`) or early-stopped model.
 */
CfolStatus cfol_train_result_model(const CfolTrainResult *result,
                                   int32_t early_stopped,
                                   CfolModel **out);

void cfol_model_free(CfolModel *model);

/**
 * Predicted class of `x[0..d]`.
 */
CfolStatus cfol_model_predict(const CfolModel *model, const double *x, size_t d, size_t *out_class);

/**
 * Writes the model in the binary checkpoint format.
 */
CfolStatus cfol_model_save(const CfolModel *model, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CFOL_H */
