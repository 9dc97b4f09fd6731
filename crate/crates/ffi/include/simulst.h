#ifndef SIMULST_H
#define SIMULST_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum SimulstStatus {
  SIMULST_STATUS_OK = 0,
  SIMULST_STATUS_NULL_POINTER = 1,
  SIMULST_STATUS_INVALID_UTF8 = 2,
  SIMULST_STATUS_INVALID_ARGUMENT = 3,
  /*
   Commit ordering, finalization, or delay bounds violated.
   */
  SIMULST_STATUS_LOG_ERROR = 4,
  /*
   Hypothesis or attention inconsistent with the policy state.
   */
  SIMULST_STATUS_POLICY_ERROR = 5,
  /*
   Metric undefined for the input (empty log, zero duration, ...).
   */
  SIMULST_STATUS_METRIC_ERROR = 6,
  SIMULST_STATUS_SCHEDULE_ERROR = 7,
  SIMULST_STATUS_ZERO_TOKENS = 8,
  SIMULST_STATUS_PARSE_ERROR = 9,
  SIMULST_STATUS_PANIC = 10,
  SIMULST_STATUS_OTHER = 11,
} SimulstStatus;

/*
 Which clock the delays are read from.
 */
typedef enum SimulstDelayMode {
  SIMULST_DELAY_MODE_IDEAL = 0,
  SIMULST_DELAY_MODE_COMPUTATION_AWARE = 1,
} SimulstDelayMode;

/*
 Opaque LA-n policy state. Committed tokens are mirrored as C strings so
 their pointers stay valid until the next step or free.
 */
typedef struct SimulstLa SimulstLa;

/*
 Opaque emission log.
 */
typedef struct SimulstLog SimulstLog;

/*
 Opaque single-channel speech schedule.
 */
typedef struct SimulstSchedule SimulstSchedule;

/*
 Latency metrics of one log under one clock. `laal` is NaN when the log
 has no reference.
 */
typedef struct SimulstDelayMetrics {
  double al;
  double laal;
  double ap;
  double dal;
  double atd;
  double start_offset;
  double end_offset;
  size_t tau;
} SimulstDelayMetrics;

/*
 One scheduled speech segment.
 */
typedef struct SimulstSegment {
  double requested_at_ms;
  double starts_at_ms;
  double ends_at_ms;
} SimulstSegment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread. Valid until the next
 failing call on the same thread; empty if none failed yet.
 */
const char *simulst_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *simulst_version(void);

void simulst_string_free(char *s);

/*
 New empty log for a source of `source_duration_ms`.
 */
enum SimulstStatus simulst_log_new(double source_duration_ms, struct SimulstLog **out_log);

/*
 Parses one JSONL log record.
 */
enum SimulstStatus simulst_log_from_json(const char *json, struct SimulstLog **out_log);

/*
 Serializes the log as one JSON line. Free the result with
 `simulst_string_free`.
 */
enum SimulstStatus simulst_log_to_json(const struct SimulstLog *log, char **out_json);

void simulst_log_free(struct SimulstLog *log);

/*
 Sets the reference translation used by LAAL.
 */
enum SimulstStatus simulst_log_set_reference(struct SimulstLog *log,
                                             const char *const *tokens,
                                             size_t count);

/*
 Appends one commit of `count` tokens with its ideal and
 computation-aware delays.
 */
enum SimulstStatus simulst_log_record_commit(struct SimulstLog *log,
                                             const char *const *tokens,
                                             size_t count,
                                             double ideal_delay_ms,
                                             double ca_delay_ms);

/*
 Closes the log at the end of the source.
 */
enum SimulstStatus simulst_log_finalize(struct SimulstLog *log);

enum SimulstStatus simulst_log_token_count(const struct SimulstLog *log, size_t *out_count);

/*
 AL, LAAL, AP, DAL, ATD and offsets of a finalized log. ATD cuts the
 source into `atd_segment_ms` pieces.
 */
enum SimulstStatus simulst_log_metrics(const struct SimulstLog *log,
                                       enum SimulstDelayMode mode,
                                       double atd_segment_ms,
                                       struct SimulstDelayMetrics *out_metrics);

/*
 Corpus BLEU in `[0, 100]` over `count` sentence pairs. Sentences are
 whitespace-tokenized.
 */
enum SimulstStatus simulst_bleu(const char *const *hypotheses,
                                const char *const *references,
                                size_t count,
                                size_t max_n,
                                double *out_score);

/*
 Keep an utterance iff `samples / tokens <= max_ratio`.
 */
enum SimulstStatus simulst_keep_ratio(uint64_t samples,
                                      size_t tokens,
                                      double max_ratio,
                                      bool *out_keep);

/*
 One AlignAtt round over a row-major `rows x frames` attention matrix,
 one row per hypothesis token. Rows must be probability vectors. Tokens before `committed` are skipped;
 the rest are emitted while their alignment stays within `frames - f`.
 Writes the number of newly emitted tokens and whether the scan stopped.
 */
enum SimulstStatus simulst_alignatt_round(const double *attention,
                                          size_t rows,
                                          size_t frames,
                                          size_t committed,
                                          size_t f,
                                          size_t *out_emitted,
                                          bool *out_stopped);

/*
 New LA-n state.
 */
enum SimulstStatus simulst_la_new(size_t n, double chunk_ms, struct SimulstLa **out_la);

/*
 Feeds one hypothesis of `count` tokens. On the final chunk the rest of
 the hypothesis is committed. Writes the number of newly committed tokens.
 */
enum SimulstStatus simulst_la_step(struct SimulstLa *la,
                                   const char *const *tokens,
                                   size_t count,
                                   bool is_final,
                                   size_t *out_new);

enum SimulstStatus simulst_la_committed_count(const struct SimulstLa *la, size_t *out_count);

/*
 Borrowed pointer to committed token `index`, valid while the state lives.
 */
enum SimulstStatus simulst_la_committed_token(const struct SimulstLa *la,
                                              size_t index,
                                              const char **out_token);

void simulst_la_free(struct SimulstLa *la);

/*
 New empty speech channel; every segment becomes ready
 `tts_latency_ms` after its request.
 */
enum SimulstStatus simulst_schedule_new(double tts_latency_ms,
                                        struct SimulstSchedule **out_schedule);

/*
 Queues one segment; `out_segment` may be null.
 */
enum SimulstStatus simulst_schedule_push(struct SimulstSchedule *schedule,
                                         double requested_at_ms,
                                         double duration_ms,
                                         struct SimulstSegment *out_segment);

/*
 Start offset (first onset) and end offset (last end minus the source
 duration).
 */
enum SimulstStatus simulst_schedule_offsets(const struct SimulstSchedule *schedule,
                                            double source_duration_ms,
                                            double *out_start,
                                            double *out_end);

/*
 ATD of the played speech against the source, both cut into
 `segment_ms` pieces.
 */
enum SimulstStatus simulst_schedule_atd(const struct SimulstSchedule *schedule,
                                        double source_duration_ms,
                                        double segment_ms,
                                        double *out_atd);

void simulst_schedule_free(struct SimulstSchedule *schedule);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMULST_H */
