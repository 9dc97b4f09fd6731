//! C ABI over the simulst core: emission logs and their latency metrics,
//! corpus BLEU, the samples-per-token filter, LA-n and AlignAtt steps, and
//! the single-channel speech scheduler.
//!
//! Every fallible function returns a [`SimulstStatus`]; on failure the
//! message is kept per thread and read with [`simulst_last_error`]. Handles
//! are opaque and must be released with their `_free` function. Strings
//! handed out by the library are freed with [`simulst_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use simulst::agents::{checked_hypothesis, AgentResponse, AttentionAggregation};
use simulst::cascade::ChannelSchedule;
use simulst::corpus::{keep_ratio, FilterConfig};
use simulst::metrics::{compute_delay_metrics, corpus_bleu, AtdConfig};
use simulst::policy::{alignatt_round, LaConfig, LaState, Policy};
use simulst::{DelayMode, EmissionLog, Error, Hypothesis, Token};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulstStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    /// Commit ordering, finalization, or delay bounds violated.
    LogError = 4,
    /// Hypothesis or attention inconsistent with the policy state.
    PolicyError = 5,
    /// Metric undefined for the input (empty log, zero duration, ...).
    MetricError = 6,
    ScheduleError = 7,
    ZeroTokens = 8,
    ParseError = 9,
    Panic = 10,
    Other = 11,
}

/// Which clock the delays are read from.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulstDelayMode {
    Ideal = 0,
    ComputationAware = 1,
}

impl From<SimulstDelayMode> for DelayMode {
    fn from(m: SimulstDelayMode) -> Self {
        match m {
            SimulstDelayMode::Ideal => DelayMode::Ideal,
            SimulstDelayMode::ComputationAware => DelayMode::ComputationAware,
        }
    }
}

/// Latency metrics of one log under one clock. `laal` is NaN when the log
/// has no reference.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimulstDelayMetrics {
    pub al: f64,
    pub laal: f64,
    pub ap: f64,
    pub dal: f64,
    pub atd: f64,
    pub start_offset: f64,
    pub end_offset: f64,
    pub tau: usize,
}

/// One scheduled speech segment.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimulstSegment {
    pub requested_at_ms: f64,
    pub starts_at_ms: f64,
    pub ends_at_ms: f64,
}

/// Opaque emission log.
pub struct SimulstLog(EmissionLog);

/// Opaque LA-n policy state. Committed tokens are mirrored as C strings so
/// their pointers stay valid until the next step or free.
pub struct SimulstLa {
    state: LaState,
    committed: Vec<CString>,
}

/// Opaque single-channel speech schedule.
pub struct SimulstSchedule {
    schedule: ChannelSchedule,
    tts_latency_ms: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> SimulstStatus {
    use SimulstStatus as S;
    match err {
        Error::NonMonotoneDelay { .. }
        | Error::EmptyCommit
        | Error::WallBeforeIdeal { .. }
        | Error::Finalized
        | Error::NotFinalized
        | Error::DelayExceedsSource { .. } => S::LogError,
        Error::PrefixConflict { .. }
        | Error::BadAttentionShape { .. }
        | Error::NonStochasticRow { .. }
        | Error::MissingAttention => S::PolicyError,
        Error::EmptyLog
        | Error::ZeroDuration
        | Error::MissingReference
        | Error::EmptyTimeline
        | Error::SizeMismatch { .. } => S::MetricError,
        Error::NonMonotoneRequests { .. } => S::ScheduleError,
        Error::ZeroTokens => S::ZeroTokens,
        Error::ParseError { .. } | Error::Json(_) | Error::Csv(_) => S::ParseError,
        Error::Config(_) => S::InvalidArgument,
        _ => S::Other,
    }
}

struct Failure(SimulstStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SimulstStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SimulstStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure, and turns panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SimulstStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SimulstStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SimulstStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SimulstStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Reads `n` C strings. A null array is accepted when `n == 0`.
unsafe fn tokens_arg(p: *const *const c_char, n: usize, what: &str) -> Result<Vec<Token>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null(what));
    }
    std::slice::from_raw_parts(p, n)
        .iter()
        .enumerate()
        .map(|(i, &s)| str_arg(s, &format!("{what}[{i}]")).map(str::to_string))
        .collect()
}

fn split(s: &str) -> Vec<Token> {
    s.split_whitespace().map(str::to_string).collect()
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| invalid("string contains NUL"))
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; empty if none failed yet.
#[no_mangle]
pub extern "C" fn simulst_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn simulst_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn simulst_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// New empty log for a source of `source_duration_ms`.
#[no_mangle]
pub unsafe extern "C" fn simulst_log_new(source_duration_ms: f64, out_log: *mut *mut SimulstLog) -> SimulstStatus {
    guard(|| {
        let slot = out(out_log, "out_log")?;
        if !(source_duration_ms >= 0.0) || !source_duration_ms.is_finite() {
            return Err(invalid(format!(
                "source duration must be finite and >= 0, got {source_duration_ms}"
            )));
        }
        *slot = Box::into_raw(Box::new(SimulstLog(EmissionLog::new(source_duration_ms))));
        Ok(())
    })
}

/// Parses one JSONL log record.
#[no_mangle]
pub unsafe extern "C" fn simulst_log_from_json(json: *const c_char, out_log: *mut *mut SimulstLog) -> SimulstStatus {
    guard(|| {
        let slot = out(out_log, "out_log")?;
        let log = EmissionLog::from_json_line(str_arg(json, "json")?)?;
        *slot = Box::into_raw(Box::new(SimulstLog(log)));
        Ok(())
    })
}

/// Serializes the log as one JSON line. Free the result with
/// `simulst_string_free`.
#[no_mangle]
pub unsafe extern "C" fn simulst_log_to_json(log: *const SimulstLog, out_json: *mut *mut c_char) -> SimulstStatus {
    guard(|| {
        let slot = out(out_json, "out_json")?;
        let log = log.as_ref().ok_or_else(|| null("log"))?;
        *slot = owned_string(log.0.to_json_line()?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn simulst_log_free(log: *mut SimulstLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Sets the reference translation used by LAAL.
#[no_mangle]
pub unsafe extern "C" fn simulst_log_set_reference(
    log: *mut SimulstLog,
    tokens: *const *const c_char,
    count: usize,
) -> SimulstStatus {
    guard(|| {
        let log = out(log, "log")?;
        log.0.reference_tokens = Some(tokens_arg(tokens, count, "tokens")?);
        Ok(())
    })
}

/// Appends one commit of `count` tokens with its ideal and
/// computation-aware delays.
#[no_mangle]
pub unsafe extern "C" fn simulst_log_record_commit(
    log: *mut SimulstLog,
    tokens: *const *const c_char,
    count: usize,
    ideal_delay_ms: f64,
    ca_delay_ms: f64,
) -> SimulstStatus {
    guard(|| {
        let log = out(log, "log")?;
        let tokens = tokens_arg(tokens, count, "tokens")?;
        log.0.record_commit(tokens, ideal_delay_ms, ca_delay_ms)?;
        Ok(())
    })
}

/// Closes the log at the end of the source.
#[no_mangle]
pub unsafe extern "C" fn simulst_log_finalize(log: *mut SimulstLog) -> SimulstStatus {
    guard(|| {
        let log = out(log, "log")?;
        let t = log.0.source_duration_ms;
        log.0.finalize(t)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn simulst_log_token_count(log: *const SimulstLog, out_count: *mut usize) -> SimulstStatus {
    guard(|| {
        let slot = out(out_count, "out_count")?;
        *slot = log.as_ref().ok_or_else(|| null("log"))?.0.token_count();
        Ok(())
    })
}

/// AL, LAAL, AP, DAL, ATD and offsets of a finalized log. ATD cuts the
/// source into `atd_segment_ms` pieces.
#[no_mangle]
pub unsafe extern "C" fn simulst_log_metrics(
    log: *const SimulstLog,
    mode: SimulstDelayMode,
    atd_segment_ms: f64,
    out_metrics: *mut SimulstDelayMetrics,
) -> SimulstStatus {
    guard(|| {
        let slot = out(out_metrics, "out_metrics")?;
        let log = log.as_ref().ok_or_else(|| null("log"))?;
        let cfg = AtdConfig {
            segment_ms: atd_segment_ms,
        };
        cfg.validate()?;
        let m = compute_delay_metrics(&log.0, mode.into(), &cfg)?;
        *slot = SimulstDelayMetrics {
            al: m.al,
            laal: m.laal.unwrap_or(f64::NAN),
            ap: m.ap,
            dal: m.dal,
            atd: m.atd,
            start_offset: m.start_offset,
            end_offset: m.end_offset,
            tau: m.tau,
        };
        Ok(())
    })
}

/// Corpus BLEU in `[0, 100]` over `count` sentence pairs. Sentences are
/// whitespace-tokenized.
#[no_mangle]
pub unsafe extern "C" fn simulst_bleu(
    hypotheses: *const *const c_char,
    references: *const *const c_char,
    count: usize,
    max_n: usize,
    out_score: *mut f64,
) -> SimulstStatus {
    guard(|| {
        let slot = out(out_score, "out_score")?;
        if max_n == 0 {
            return Err(invalid("max_n must be at least 1"));
        }
        let h: Vec<_> = tokens_arg(hypotheses, count, "hypotheses")?
            .iter()
            .map(|s| split(s))
            .collect();
        let r: Vec<_> = tokens_arg(references, count, "references")?
            .iter()
            .map(|s| split(s))
            .collect();
        *slot = corpus_bleu(&h, &r, max_n)?;
        Ok(())
    })
}

/// Keep an utterance iff `samples / tokens <= max_ratio`.
#[no_mangle]
pub unsafe extern "C" fn simulst_keep_ratio(
    samples: u64,
    tokens: usize,
    max_ratio: f64,
    out_keep: *mut bool,
) -> SimulstStatus {
    guard(|| {
        let slot = out(out_keep, "out_keep")?;
        *slot = keep_ratio(samples, tokens, &FilterConfig { max_ratio })?;
        Ok(())
    })
}

/// One AlignAtt round over a row-major `rows x frames` attention matrix,
/// one row per hypothesis token. Rows must be probability vectors. Tokens before `committed` are skipped;
/// the rest are emitted while their alignment stays within `frames - f`.
/// Writes the number of newly emitted tokens and whether the scan stopped.
#[no_mangle]
pub unsafe extern "C" fn simulst_alignatt_round(
    attention: *const f64,
    rows: usize,
    frames: usize,
    committed: usize,
    f: usize,
    out_emitted: *mut usize,
    out_stopped: *mut bool,
) -> SimulstStatus {
    guard(|| {
        let emitted = out(out_emitted, "out_emitted")?;
        let stopped = out(out_stopped, "out_stopped")?;
        if attention.is_null() && rows * frames > 0 {
            return Err(null("attention"));
        }
        if frames == 0 && rows > 0 {
            return Err(invalid("attention needs at least one frame"));
        }
        if committed > rows {
            return Err(invalid(format!("committed {committed} exceeds {rows} rows")));
        }
        let data = if rows * frames == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(attention, rows * frames)
        };
        let tokens: Vec<Token> = (0..rows).map(|i| format!("t{i}")).collect();
        let matrix = data.chunks(frames.max(1)).take(rows).map(<[f64]>::to_vec).collect();
        let resp = AgentResponse {
            tokens: tokens.clone(),
            attention: Some(matrix),
            ..Default::default()
        };
        let hyp = checked_hypothesis(resp, frames, &tokens[..committed], AttentionAggregation::Given)?;
        let r = alignatt_round(&hyp, frames, &tokens[..committed], f)?;
        *emitted = r.emitted.len();
        *stopped = r.stopped;
        Ok(())
    })
}

/// New LA-n state.
#[no_mangle]
pub unsafe extern "C" fn simulst_la_new(n: usize, chunk_ms: f64, out_la: *mut *mut SimulstLa) -> SimulstStatus {
    guard(|| {
        let slot = out(out_la, "out_la")?;
        let cfg = LaConfig::new(n, chunk_ms);
        cfg.validate()?;
        *slot = Box::into_raw(Box::new(SimulstLa {
            state: LaState::new(cfg),
            committed: Vec::new(),
        }));
        Ok(())
    })
}

/// Feeds one hypothesis of `count` tokens. On the final chunk the rest of
/// the hypothesis is committed. Writes the number of newly committed tokens.
#[no_mangle]
pub unsafe extern "C" fn simulst_la_step(
    la: *mut SimulstLa,
    tokens: *const *const c_char,
    count: usize,
    is_final: bool,
    out_new: *mut usize,
) -> SimulstStatus {
    guard(|| {
        let la = out(la, "la")?;
        let slot = out(out_new, "out_new")?;
        let hyp = Hypothesis::new(tokens_arg(tokens, count, "tokens")?);
        let new = la.state.step(&hyp, 0, is_final)?;
        for t in &new {
            la.committed
                .push(CString::new(t.as_str()).map_err(|_| invalid("token contains NUL"))?);
        }
        *slot = new.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn simulst_la_committed_count(la: *const SimulstLa, out_count: *mut usize) -> SimulstStatus {
    guard(|| {
        let slot = out(out_count, "out_count")?;
        *slot = la.as_ref().ok_or_else(|| null("la"))?.committed.len();
        Ok(())
    })
}

/// Borrowed pointer to committed token `index`, valid while the state lives.
#[no_mangle]
pub unsafe extern "C" fn simulst_la_committed_token(
    la: *const SimulstLa,
    index: usize,
    out_token: *mut *const c_char,
) -> SimulstStatus {
    guard(|| {
        let slot = out(out_token, "out_token")?;
        let la = la.as_ref().ok_or_else(|| null("la"))?;
        let tok = la
            .committed
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range ({} committed)", la.committed.len())))?;
        *slot = tok.as_ptr();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn simulst_la_free(la: *mut SimulstLa) {
    if !la.is_null() {
        drop(Box::from_raw(la));
    }
}

/// New empty speech channel; every segment becomes ready
/// `tts_latency_ms` after its request.
#[no_mangle]
pub unsafe extern "C" fn simulst_schedule_new(
    tts_latency_ms: f64,
    out_schedule: *mut *mut SimulstSchedule,
) -> SimulstStatus {
    guard(|| {
        let slot = out(out_schedule, "out_schedule")?;
        if !(tts_latency_ms >= 0.0) || !tts_latency_ms.is_finite() {
            return Err(invalid(format!(
                "TTS latency must be finite and >= 0, got {tts_latency_ms}"
            )));
        }
        *slot = Box::into_raw(Box::new(SimulstSchedule {
            schedule: ChannelSchedule::new(),
            tts_latency_ms,
        }));
        Ok(())
    })
}

/// Queues one segment; `out_segment` may be null.
#[no_mangle]
pub unsafe extern "C" fn simulst_schedule_push(
    schedule: *mut SimulstSchedule,
    requested_at_ms: f64,
    duration_ms: f64,
    out_segment: *mut SimulstSegment,
) -> SimulstStatus {
    guard(|| {
        let s = out(schedule, "schedule")?;
        let seg = s
            .schedule
            .push(Vec::new(), requested_at_ms, duration_ms, s.tts_latency_ms)?;
        if let Some(slot) = out_segment.as_mut() {
            *slot = SimulstSegment {
                requested_at_ms: seg.requested_at_ms,
                starts_at_ms: seg.starts_at_ms,
                ends_at_ms: seg.ends_at_ms,
            };
        }
        Ok(())
    })
}

/// Start offset (first onset) and end offset (last end minus the source
/// duration).
#[no_mangle]
pub unsafe extern "C" fn simulst_schedule_offsets(
    schedule: *const SimulstSchedule,
    source_duration_ms: f64,
    out_start: *mut f64,
    out_end: *mut f64,
) -> SimulstStatus {
    guard(|| {
        let start = out(out_start, "out_start")?;
        let end = out(out_end, "out_end")?;
        let s = schedule.as_ref().ok_or_else(|| null("schedule"))?;
        (*start, *end) = s.schedule.offsets(source_duration_ms)?;
        Ok(())
    })
}

/// ATD of the played speech against the source, both cut into
/// `segment_ms` pieces.
#[no_mangle]
pub unsafe extern "C" fn simulst_schedule_atd(
    schedule: *const SimulstSchedule,
    source_duration_ms: f64,
    segment_ms: f64,
    out_atd: *mut f64,
) -> SimulstStatus {
    guard(|| {
        let slot = out(out_atd, "out_atd")?;
        let s = schedule.as_ref().ok_or_else(|| null("schedule"))?;
        *slot = s.schedule.atd(source_duration_ms, &AtdConfig { segment_ms })?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn simulst_schedule_free(schedule: *mut SimulstSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}
