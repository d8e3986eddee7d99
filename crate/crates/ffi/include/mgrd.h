#ifndef MGRD_H
#define MGRD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum MgrdStatus {
  MGRD_STATUS_OK = 0,
  MGRD_STATUS_NULL_POINTER = 1,
  MGRD_STATUS_INVALID_UTF8 = 2,
  MGRD_STATUS_INVALID_ARGUMENT = 3,
  MGRD_STATUS_IO = 4,
  MGRD_STATUS_MALFORMED_FORMAT = 5,
  MGRD_STATUS_OUT_OF_VOCABULARY = 6,
  MGRD_STATUS_BUFFER_TOO_SMALL = 7,
  MGRD_STATUS_PANIC = 8,
} MgrdStatus;

/**
 * Opaque policy handle.
 */
typedef struct MgrdPolicy MgrdPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * success. Valid until the next call on the same thread.
 */
const char *mgrd_last_error_message(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a pointer obtained from this library, not yet freed.
 */
void mgrd_string_free(char *s);

/**
 * Load a policy checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MgrdStatus mgrd_policy_load(const char *path, struct MgrdPolicy **out);

/**
 * Release a policy handle. Null is ignored.
 *
 * # Safety
 * `p` must be null or a handle from [`mgrd_policy_load`], not yet freed.
 */
void mgrd_policy_free(struct MgrdPolicy *p);

/**
 * Number of tokens in the policy vocabulary.
 *
 * # Safety
 * `p` must be a live handle; `out` must be writable.
 */
enum MgrdStatus mgrd_policy_vocab_size(const struct MgrdPolicy *p, size_t *out);

/**
 * Next-token log-probabilities after `context` (token ids) at temperature 1.
 * `out` must hold at least the vocabulary size.
 *
 * # Safety
 * `context` must point to `context_len` ids; `out` to `out_len` doubles.
 */
enum MgrdStatus mgrd_policy_logprobs(const struct MgrdPolicy *p,
                                     const uint32_t *context,
                                     size_t context_len,
                                     double *out,
                                     size_t out_len);

/**
 * Sample a continuation of a whitespace-tokenized prompt; the generated
 * text (without the end token) is returned through `out`.
 *
 * # Safety
 * `prompt` must be a NUL-terminated string; `out` must be writable.
 */
enum MgrdStatus mgrd_policy_sample_text(const struct MgrdPolicy *p,
                                        const char *prompt,
                                        double temperature,
                                        size_t max_len,
                                        uint64_t seed,
                                        char **out);

/**
 * Strictly parse `<think>...</think>` + response with the default tags.
 *
 * # Safety
 * `raw` must be a NUL-terminated string; both outputs must be writable.
 */
enum MgrdStatus mgrd_format_parse(const char *raw, char **out_think, char **out_response);

/**
 * Render a think span and response in the default format.
 *
 * # Safety
 * Inputs must be NUL-terminated strings; `out` must be writable.
 */
enum MgrdStatus mgrd_format_emit(const char *think, const char *response, char **out);

/**
 * Composite audio reward with weights `w_acc`/`w_fmt` (normalized matcher).
 *
 * # Safety
 * Inputs must be NUL-terminated strings; `out` must be writable.
 */
enum MgrdStatus mgrd_reward_audio(const char *think,
                                  const char *response,
                                  const char *answer,
                                  double w_acc,
                                  double w_fmt,
                                  double *out);

/**
 * Binary text reward (normalized matcher).
 *
 * # Safety
 * Inputs must be NUL-terminated strings; `out` must be writable.
 */
enum MgrdStatus mgrd_reward_text(const char *response, const char *answer, double *out);

/**
 * 1 when `answer` matches `truth`, else 0. `normalized` selects the
 * case- and punctuation-insensitive matcher over exact comparison.
 *
 * # Safety
 * Inputs must be NUL-terminated strings; `out` must be writable.
 */
enum MgrdStatus mgrd_verify_answer(const char *answer,
                                   const char *truth,
                                   bool normalized,
                                   uint8_t *out);

/**
 * Generalized advantage estimates for `n` steps into `out`.
 *
 * # Safety
 * `rewards`, `values` and `out` must each point to `n` doubles.
 */
enum MgrdStatus mgrd_gae(const double *rewards,
                         const double *values,
                         size_t n,
                         double gamma,
                         double lambda,
                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MGRD_H */
