#ifndef FEEDLAB_H
#define FEEDLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define FEEDLAB_ARM_CONTROL 0

#define FEEDLAB_ARM_TREATMENT 1

#define FEEDLAB_EXPERIMENT_REDUCE 0

#define FEEDLAB_EXPERIMENT_INCREASE 1

typedef enum FeedlabStatus {
  FEEDLAB_STATUS_OK = 0,
  FEEDLAB_STATUS_NULL_POINTER = 1,
  FEEDLAB_STATUS_INVALID_UTF8 = 2,
  FEEDLAB_STATUS_INVALID_JSON = 3,
  FEEDLAB_STATUS_INVALID_ARGUMENT = 4,
  FEEDLAB_STATUS_IO = 5,
  FEEDLAB_STATUS_STATS = 6,
  FEEDLAB_STATUS_PANIC = 7,
} FeedlabStatus;

/**
 * Lexicon scorer.
 */
typedef struct FeedlabOracle FeedlabOracle;

/**
 * In-feed survey scheduler for one participant.
 */
typedef struct FeedlabScheduler FeedlabScheduler;

/**
 * Reduced Exposure state for one browsing session: posts demoted from
 * earlier loads waiting to re-enter the feed.
 */
typedef struct FeedlabSession FeedlabSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string the caller must not free.
 */
const char *feedlab_version(void);

/**
 * Message of the last failure on this thread, or NULL. Free with
 * `feedlab_string_free`.
 */
char *feedlab_last_error(void);

/**
 * Release a string returned by this library. NULL is a no-op.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void feedlab_string_free(char *s);

/**
 * Oracle with the bundled lexicon.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum FeedlabStatus feedlab_oracle_new(struct FeedlabOracle **out);

/**
 * Oracle from a lexicon in TOML.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` valid for writes.
 */
enum FeedlabStatus feedlab_oracle_from_toml(const char *toml, struct FeedlabOracle **out);

/**
 * # Safety
 * `oracle` must come from `feedlab_oracle_new*` and not have been freed.
 */
void feedlab_oracle_free(struct FeedlabOracle *oracle);

/**
 * Score one text. Writes an `AapaScore` object.
 *
 * # Safety
 * Pointers must be valid; `text` NUL-terminated.
 */
enum FeedlabStatus feedlab_oracle_score(struct FeedlabOracle *oracle,
                                        const char *text,
                                        char **out_json);

/**
 * Score the non-ad posts of a JSON array of posts. Writes an object from
 * post id to `AapaScore`.
 *
 * # Safety
 * Pointers must be valid; `posts_json` NUL-terminated.
 */
enum FeedlabStatus feedlab_oracle_score_posts(struct FeedlabOracle *oracle,
                                              const char *posts_json,
                                              char **out_json);

/**
 * Eligibility screen over a JSON array of posts.
 *
 * # Safety
 * Pointers must be valid; `posts_json` NUL-terminated.
 */
enum FeedlabStatus feedlab_oracle_screen(struct FeedlabOracle *oracle,
                                         const char *posts_json,
                                         double *out_fraction,
                                         bool *out_qualified);

/**
 * # Safety
 * `session_id` NUL-terminated; `out` valid for writes.
 */
enum FeedlabStatus feedlab_session_new(const char *session_id, struct FeedlabSession **out);

/**
 * # Safety
 * `session` must come from `feedlab_session_new` and not have been freed.
 */
void feedlab_session_free(struct FeedlabSession *session);

/**
 * Reduced Exposure for one load of the session. `batch_json` is a feed
 * batch, `scores_json` maps every non-ad post id to its score. Writes the
 * served feed with posts demoted earlier spliced in at their keys.
 *
 * # Safety
 * Pointers must be valid; JSON arguments NUL-terminated.
 */
enum FeedlabStatus feedlab_session_rerank_reduced(struct FeedlabSession *session,
                                                  const char *batch_json,
                                                  const char *scores_json,
                                                  int32_t arm_code,
                                                  uint64_t seed_value,
                                                  bool survey_sampled,
                                                  char **out_json);

/**
 * Demoted posts still waiting to re-enter the session.
 *
 * # Safety
 * Pointers must be valid.
 */
enum FeedlabStatus feedlab_session_pending(struct FeedlabSession *session, size_t *out_count);

/**
 * Increased Exposure for one load. `candidate_json` is a post or NULL.
 *
 * # Safety
 * Pointers must be valid; JSON arguments NUL-terminated.
 */
enum FeedlabStatus feedlab_rerank_increased(const char *batch_json,
                                            const char *candidate_json,
                                            int32_t arm_code,
                                            uint64_t seed_value,
                                            bool survey_sampled,
                                            char **out_json);

/**
 * # Safety
 * `participant_id` NUL-terminated; `out` valid for writes.
 */
enum FeedlabStatus feedlab_scheduler_new(const char *participant_id,
                                         int32_t local_tz_offset_minutes,
                                         double p0,
                                         struct FeedlabScheduler **out);

/**
 * # Safety
 * `scheduler` must come from `feedlab_scheduler_new` and not have been freed.
 */
void feedlab_scheduler_free(struct FeedlabScheduler *scheduler);

/**
 * Prompt probability in effect at `now_ms`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum FeedlabStatus feedlab_scheduler_probability(struct FeedlabScheduler *scheduler,
                                                 int64_t now_ms,
                                                 double *out_probability);

/**
 * Decide whether an intervention event carries a survey. Writes a prompt
 * object, or NULL when none is issued.
 *
 * # Safety
 * Pointers must be valid.
 */
enum FeedlabStatus feedlab_scheduler_maybe_issue(struct FeedlabScheduler *scheduler,
                                                 int64_t now_ms,
                                                 uint64_t seed_value,
                                                 char **out_json);

/**
 * Record an answer given as a survey response object.
 *
 * # Safety
 * Pointers must be valid; `response_json` NUL-terminated.
 */
enum FeedlabStatus feedlab_scheduler_record_answer(struct FeedlabScheduler *scheduler,
                                                   const char *response_json,
                                                   int64_t now_ms);

/**
 * Sharpened q-values for `n` p-values, written to `out_q` (length `n`).
 *
 * # Safety
 * `p` and `out_q` must point to `n` doubles.
 */
enum FeedlabStatus feedlab_sharpened_fdr(const double *p, size_t n, double *out_q);

/**
 * Two-sided Mann-Whitney U test.
 *
 * # Safety
 * `x` and `y` must point to `nx` and `ny` doubles; outputs valid.
 */
enum FeedlabStatus feedlab_mann_whitney(const double *x,
                                        size_t nx,
                                        const double *y,
                                        size_t ny,
                                        double *out_u,
                                        double *out_p);

/**
 * Power simulation from a power config object. Writes the estimate.
 *
 * # Safety
 * Pointers must be valid; `config_json` NUL-terminated.
 */
enum FeedlabStatus feedlab_power(const char *config_json, char **out_json);

/**
 * Run a synthetic study and write its bundle to `out_dir`. `config_toml`
 * may be NULL for defaults. Writes the bundle manifest.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum FeedlabStatus feedlab_simulate(const char *config_toml, const char *out_dir, char **out_json);

/**
 * Analyze one experiment of a bundle. `ri_draws` of 0 keeps the default.
 * Writes the full report.
 *
 * # Safety
 * Pointers must be valid; `bundle_dir` NUL-terminated.
 */
enum FeedlabStatus feedlab_analyze(const char *bundle_dir,
                                   int32_t experiment_code,
                                   size_t ri_draws,
                                   char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEEDLAB_H */
