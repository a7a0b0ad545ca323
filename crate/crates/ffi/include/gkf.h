#ifndef GKF_H
#define GKF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum GkfStatus {
  GKF_STATUS_OK = 0,
  GKF_STATUS_NULL_POINTER = 1,
  GKF_STATUS_INVALID_ARGUMENT = 2,
  GKF_STATUS_DATA = 3,
  GKF_STATUS_NUMERICAL = 4,
  GKF_STATUS_IO = 5,
  GKF_STATUS_PANIC = 6,
} GkfStatus;

typedef enum GkfModelFamily {
  GKF_MODEL_FAMILY_REPLICA = 0,
  GKF_MODEL_FAMILY_STGNN = 1,
} GkfModelFamily;

typedef enum GkfKfr {
  GKF_KFR_ON = 0,
  GKF_KFR_OFF = 1,
  GKF_KFR_BOTH = 2,
} GkfKfr;

typedef struct GkfEpisode GkfEpisode;

/**
 * Online filter: a model copy, noise levels and the current belief.
 */
typedef struct GkfFilter GkfFilter;

typedef struct GkfModel GkfModel;

/**
 * Training hyperparameters; start from [`gkf_train_config_default`].
 */
typedef struct GkfTrainConfig {
  size_t epochs;
  double lr;
  size_t batch_size;
  size_t window;
  size_t patience;
  size_t burn_in;
  double split[3];
  uint64_t seed;
} GkfTrainConfig;

/**
 * Test-segment summary. Entries a mode did not compute are NaN.
 */
typedef struct GkfReport {
  double mse_without_kfr;
  double mse_with_kfr;
  double rpi_mean;
  double rpi_std;
  size_t n_batches;
} GkfReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gkf_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the length of the full
 * message including the NUL, or 0 when there is none.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null with `len == 0`.
 */
size_t gkf_last_error(char *buf, size_t len);

/**
 * Generates an episode from a preset (`"lingss"` or `"nonlingss"`).
 * `n_nodes` and `steps` of 0 keep the preset values.
 *
 * # Safety
 * `preset` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GkfStatus gkf_episode_generate(const char *preset,
                                    uint64_t seed,
                                    size_t n_nodes,
                                    size_t steps,
                                    struct GkfEpisode **out);

/**
 * # Safety
 * `dir` must be a NUL-terminated path and `out` a valid pointer.
 */
enum GkfStatus gkf_episode_load(const char *dir, struct GkfEpisode **out);

/**
 * # Safety
 * `episode` must come from this library; `dir` must be NUL-terminated.
 */
enum GkfStatus gkf_episode_save(const struct GkfEpisode *episode, const char *dir);

/**
 * # Safety
 * `episode` must come from this library and not be used afterwards.
 */
void gkf_episode_free(struct GkfEpisode *episode);

/**
 * Number of steps and nodes.
 *
 * # Safety
 * `episode` must come from this library; outputs must be valid pointers.
 */
enum GkfStatus gkf_episode_shape(const struct GkfEpisode *episode, size_t *steps, size_t *n_nodes);

/**
 * Copies the input (`x_t`) and output (`y_t`) of step `t`; each buffer must
 * hold exactly `n_nodes` values. Either buffer may be null to skip it.
 *
 * # Safety
 * Non-null buffers must be valid for `len` doubles.
 */
enum GkfStatus gkf_episode_step(const struct GkfEpisode *episode,
                                size_t t,
                                double *input,
                                double *output,
                                size_t len);

/**
 * The Replica model with the episode's generator parameters.
 *
 * # Safety
 * `episode` must come from this library and `out` be a valid pointer.
 */
enum GkfStatus gkf_model_true_replica(const struct GkfEpisode *episode, struct GkfModel **out);

/**
 * Freshly initialized model of `family` on the episode's topology.
 *
 * # Safety
 * `episode` must come from this library and `out` be a valid pointer.
 */
enum GkfStatus gkf_model_init(enum GkfModelFamily family,
                              const struct GkfEpisode *episode,
                              uint64_t seed,
                              struct GkfModel **out);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
enum GkfStatus gkf_model_load(const char *path, struct GkfModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum GkfStatus gkf_model_save(const struct GkfModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void gkf_model_free(struct GkfModel *model);

/**
 * Number of parameters and length of the flattened state.
 *
 * # Safety
 * `model` must come from this library; outputs must be valid pointers.
 */
enum GkfStatus gkf_model_shape(const struct GkfModel *model, size_t *n_params, size_t *state_len);

/**
 * Copies the flat parameter vector into `buf` (exactly `n_params` long).
 *
 * # Safety
 * `buf` must be valid for `len` doubles.
 */
enum GkfStatus gkf_model_params(const struct GkfModel *model, double *buf, size_t len);

struct GkfTrainConfig gkf_train_config_default(void);

/**
 * Trains `model` in place on `episode`; writes the windowed test MSE of the
 * best-validation parameters to `test_mse` when non-null.
 *
 * # Safety
 * Handles must come from this library; `test_mse` may be null.
 */
enum GkfStatus gkf_model_train(struct GkfModel *model,
                               const struct GkfEpisode *episode,
                               struct GkfTrainConfig config,
                               double *test_mse);

/**
 * Evaluates `model` over the episode's test segment.
 *
 * # Safety
 * Handles must come from this library and `out` be a valid pointer.
 */
enum GkfStatus gkf_evaluate(const struct GkfModel *model,
                            const struct GkfEpisode *episode,
                            enum GkfKfr kfr,
                            struct GkfReport *out);

/**
 * Filter over a copy of `model` with `Q = sigma_eta^2 I`,
 * `R = sigma_nu^2 I` and prior `N(0, sigma_eta^2 I)`.
 *
 * # Safety
 * `model` must come from this library and `out` be a valid pointer.
 */
enum GkfStatus gkf_filter_new(const struct GkfModel *model,
                              double sigma_eta,
                              double sigma_nu,
                              struct GkfFilter **out);

/**
 * # Safety
 * `filter` must come from this library and not be used afterwards.
 */
void gkf_filter_free(struct GkfFilter *filter);

/**
 * Resets the belief to the prior.
 *
 * # Safety
 * `filter` must come from this library.
 */
enum GkfStatus gkf_filter_reset(struct GkfFilter *filter);

/**
 * One filter iteration driven by the previous input `x` (`n_x` values).
 * With `refine` the observation `y` (`n_y` values) updates the belief;
 * without it the a priori state is carried forward and `y` is ignored.
 * The a priori prediction is written to `y_prior` (`n_y` values) when it is
 * non-null.
 *
 * # Safety
 * Buffers must be valid for their stated lengths.
 */
enum GkfStatus gkf_filter_step(struct GkfFilter *filter,
                               const double *x,
                               size_t n_x,
                               const double *y,
                               size_t n_y,
                               bool refine,
                               double *y_prior);

/**
 * Copies the current state mean (`state_len` values) and, when `cov` is
 * non-null, the row-major covariance (`state_len^2` values).
 *
 * # Safety
 * Buffers must be valid for their stated lengths.
 */
enum GkfStatus gkf_filter_state(const struct GkfFilter *filter,
                                double *mean,
                                size_t len,
                                double *cov);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GKF_H */
