#ifndef SFRBSDE_H
#define SFRBSDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SfrbsdeStatus {
  SFRBSDE_STATUS_OK = 0,
  SFRBSDE_STATUS_NULL_POINTER = 1,
  SFRBSDE_STATUS_INVALID_ARGUMENT = 2,
  SFRBSDE_STATUS_CONFIG = 3,
  SFRBSDE_STATUS_NUMERIC = 4,
  SFRBSDE_STATUS_IO = 5,
  SFRBSDE_STATUS_OUT_OF_RANGE = 6,
  SFRBSDE_STATUS_PANIC = 7,
} SfrbsdeStatus;

/*
 Opaque experiment configuration.
 */
typedef struct SfrbsdeConfig SfrbsdeConfig;

/*
 Opaque sweep result.
 */
typedef struct SfrbsdeSweep SfrbsdeSweep;

/*
 One epsilon of a sweep. Flags are 1 for pass and 0 for fail.
 */
typedef struct SfrbsdeSweepRow {
  double epsilon;
  double t_lo;
  double sup_mse;
  double sup_mse_stderr;
  double z_err_integral;
  double z_err_stderr;
  double exceed_prob;
  double exceed_stderr;
  double c4_bound;
  double lemma1_lhs;
  double lemma1_rhs;
  uint8_t pass_lemma1;
  uint8_t pass_theorem;
  uint8_t pass_chebyshev;
} SfrbsdeSweepRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. Valid until the next call.
 */
const char *sfrbsde_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sfrbsde_version(void);

/*
 New configuration with every default filled in.
 */
struct SfrbsdeConfig *sfrbsde_config_default(void);

/*
 Parses `key = value` text. On success `*out` owns a new handle.

 # Safety
 `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SfrbsdeStatus sfrbsde_config_parse(const char *text, struct SfrbsdeConfig **out);

/*
 Sets one key. The configuration is re-validated; on failure it is left unchanged.

 # Safety
 `cfg` must come from this library; `key` and `value` must be NUL-terminated.
 */
enum SfrbsdeStatus sfrbsde_config_set(struct SfrbsdeConfig *cfg,
                                      const char *key,
                                      const char *value);

/*
 Serialised configuration; free with [`sfrbsde_string_free`].

 # Safety
 `cfg` must come from this library and `out` must be valid.
 */
enum SfrbsdeStatus sfrbsde_config_to_text(const struct SfrbsdeConfig *cfg, char **out);

/*
 # Safety
 `s` must come from this library or be null.
 */
void sfrbsde_string_free(char *s);

/*
 # Safety
 `cfg` must come from this library or be null, and is invalid afterwards.
 */
void sfrbsde_config_free(struct SfrbsdeConfig *cfg);

/*
 Runs a full sweep. On success `*out` owns a new handle.

 # Safety
 `cfg` must come from this library and `out` must be valid.
 */
enum SfrbsdeStatus sfrbsde_sweep_run(const struct SfrbsdeConfig *cfg, struct SfrbsdeSweep **out);

/*
 Number of epsilon rows, 0 for a null handle.

 # Safety
 `sweep` must come from this library or be null.
 */
size_t sfrbsde_sweep_len(const struct SfrbsdeSweep *sweep);

/*
 # Safety
 `sweep` must come from this library and `out` must be valid.
 */
enum SfrbsdeStatus sfrbsde_sweep_row(const struct SfrbsdeSweep *sweep,
                                     size_t index,
                                     struct SfrbsdeSweepRow *out);

/*
 Fitted log-log slope (NaN when every sup-MSE is zero).

 # Safety
 `sweep` must come from this library and `out` must be valid.
 */
enum SfrbsdeStatus sfrbsde_sweep_slope(const struct SfrbsdeSweep *sweep, double *out);

/*
 1 if every claim-level check of the sweep passes, else 0.

 # Safety
 `sweep` must come from this library and `out` must be valid.
 */
enum SfrbsdeStatus sfrbsde_sweep_passed(const struct SfrbsdeSweep *sweep, uint8_t *out);

/*
 Writes the sweep CSV to `path`.

 # Safety
 `sweep` must come from this library and `path` must be NUL-terminated.
 */
enum SfrbsdeStatus sfrbsde_sweep_write_csv(const struct SfrbsdeSweep *sweep, const char *path);

/*
 # Safety
 `sweep` must come from this library or be null, and is invalid afterwards.
 */
void sfrbsde_sweep_free(struct SfrbsdeSweep *sweep);

/*
 Runs the reduced-scale invariant suite; `*passed` is 1 when every check passes.

 # Safety
 `cfg` must come from this library and `passed` must be valid.
 */
enum SfrbsdeStatus sfrbsde_verify(const struct SfrbsdeConfig *cfg, uint8_t *passed);

/*
 `E[B^H_t B^H_s]`.

 # Safety
 `out` must be valid.
 */
enum SfrbsdeStatus sfrbsde_fbm_covariance(double t, double s, double hurst, double *out);

/*
 `||c||^2_t` for a constant integrand, by the production quadrature.

 # Safety
 `out` must be valid.
 */
enum SfrbsdeStatus sfrbsde_norm_sq_constant(double c, double t, double hurst, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SFRBSDE_H */
