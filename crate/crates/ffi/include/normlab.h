#ifndef NORMLAB_H
#define NORMLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NlStatus {
  NL_STATUS_OK = 0,
  NL_STATUS_NULL_POINTER = 1,
  NL_STATUS_INVALID_UTF8 = 2,
  NL_STATUS_INVALID_JSON = 3,
  NL_STATUS_INVALID_ARGUMENT = 4,
  NL_STATUS_BACKEND = 5,
  NL_STATUS_ENGINE = 6,
  NL_STATUS_CERTIFY = 7,
  // The episode already ran to its horizon.
  NL_STATUS_FINISHED = 8,
  NL_STATUS_PANIC = 9,
} NlStatus;

// Opaque pattern-completion backend.
typedef struct NlBackend NlBackend;

// Opaque episode in progress.
typedef struct NlEngine NlEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call on the same thread.
const char *nl_last_error(void);

// # Safety
// `s` must be null or a string returned by this library.
void nl_string_free(char *s);

const char *nl_version(void);

// Builds a backend from a JSON backend config.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out_backend` writable.
enum NlStatus nl_backend_new(const char *config_json, struct NlBackend **out_backend);

// # Safety
// `backend` must be null or a handle from [`nl_backend_new`].
void nl_backend_free(struct NlBackend *backend);

// Log-probability of `continuation` after `context`. With `complete` set the
// continuation must also end there.
//
// # Safety
// Pointers must be valid; strings NUL-terminated.
enum NlStatus nl_backend_log_prob(const struct NlBackend *handle,
                                  const char *context,
                                  const char *continuation,
                                  bool complete,
                                  double *out_log_prob);

// KL divergence between the continuation distributions of two contexts.
// `out_std_error` receives NaN when the value is exact.
//
// # Safety
// Pointers must be valid; strings NUL-terminated.
enum NlStatus nl_backend_kl(const struct NlBackend *handle,
                            const char *context_a,
                            const char *context_b,
                            uintptr_t horizon,
                            double *out_value,
                            double *out_std_error);

// Seeded completion of at most `max_tokens` tokens.
//
// # Safety
// Pointers must be valid; the result is freed with [`nl_string_free`].
enum NlStatus nl_backend_sample(const struct NlBackend *handle,
                                const char *context,
                                uintptr_t max_tokens,
                                uint64_t seed,
                                char **out_text);

// Trains the backend on a JSON array of strings.
//
// # Safety
// Pointers must be valid; `corpus_json` NUL-terminated.
enum NlStatus nl_backend_consolidate(struct NlBackend *handle, const char *corpus_json);

// Starts an episode of a JSON scenario.
//
// # Safety
// `scenario_json` must be NUL-terminated and `out_engine` writable.
enum NlStatus nl_engine_new(const char *scenario_json, uint64_t seed, struct NlEngine **out_engine);

// # Safety
// `engine` must be null or a handle from [`nl_engine_new`].
void nl_engine_free(struct NlEngine *engine);

// Runs one tick and writes its record as a JSON object.
//
// # Safety
// Pointers must be valid; the result is freed with [`nl_string_free`].
enum NlStatus nl_engine_step(struct NlEngine *engine, char **out_tick_json);

// Runs a whole episode and writes the trace as JSON Lines.
//
// # Safety
// Pointers must be valid; the result is freed with [`nl_string_free`].
enum NlStatus nl_run_episode(const char *scenario_json, uint64_t seed, char **out_trace);

// Certifies one property and writes the report as JSON.
//
// `kind` is `convention`, `sanction`, `reproduction` or `norm`. `options_json`
// may hold `f_grid`, `seed`, `r`, `generic_threshold` and, for `sanction`,
// a `sanction` object. `actor` is ignored by `norm`, which uses every actor.
//
// # Safety
// Pointers must be valid; the result is freed with [`nl_string_free`].
enum NlStatus nl_certify(const char *kind,
                         const char *scenario_json,
                         const char *actor,
                         const char *frame_json,
                         const char *options_json,
                         char **out_report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NORMLAB_H */
