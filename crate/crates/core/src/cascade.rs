//! Speech-to-speech cascade: handing committed text to a TTS stage, the
//! dual-track (phoneme + prosody) estimator, the single output channel, and
//! timing diagrams.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agents::{checked_hypothesis, Agent, AgentRequest, AttentionAggregation};
use crate::error::{Error, Result};
use crate::metrics::{compute_atd, segment_interval, segment_source, AtdConfig};
use crate::policy::alignatt::{alignatt_round, alignment};
use crate::timeline::{DelayMode, EmissionLog, Token};

pub mod prosody {
    pub const RISE: &str = "[";
    pub const FALL: &str = "]";
    pub const BOUNDARY: &str = "#";
    pub const BLANK: &str = "_";

    pub const ALL: [&str; 4] = [RISE, FALL, BOUNDARY, BLANK];

    pub fn is_valid(symbol: &str) -> bool {
        ALL.contains(&symbol)
    }
}

pub const DEFAULT_BOUNDARIES: &[&str] = &[
    "。",
    "、",
    "．",
    "，",
    "！",
    "？",
    ".",
    ",",
    "!",
    "?",
    ";",
    ":",
    prosody::BOUNDARY,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoffKind {
    #[default]
    Immediate,
    BoundaryGated,
    EstimatorGated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoffPolicy {
    pub kind: HandoffKind,
    #[serde(default = "default_estimator_f")]
    pub estimator_f: usize,
    /// A token is a boundary if it equals one of these or ends with one.
    #[serde(default = "default_boundaries")]
    pub boundaries: Vec<String>,
}

fn default_estimator_f() -> usize {
    1
}

fn default_boundaries() -> Vec<String> {
    DEFAULT_BOUNDARIES.iter().map(|s| s.to_string()).collect()
}

impl Default for HandoffPolicy {
    fn default() -> Self {
        Self::new(HandoffKind::Immediate)
    }
}

impl HandoffPolicy {
    pub fn new(kind: HandoffKind) -> Self {
        Self {
            kind,
            estimator_f: default_estimator_f(),
            boundaries: default_boundaries(),
        }
    }

    pub fn is_boundary(&self, token: &str) -> bool {
        self.boundaries
            .iter()
            .any(|b| !b.is_empty() && (token == b || token.ends_with(b.as_str())))
    }
}

/// A text chunk handed to TTS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtsRequest {
    pub tokens: Vec<Token>,
    pub requested_at_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DualTrackResult {
    pub phonemes: Vec<Token>,
    pub prosody: Vec<Token>,
}

/// Incremental dual-track estimation over a growing text prefix, gated by
/// the AlignAtt rule with the text tokens as the attended "frames".
#[derive(Debug, Clone)]
pub struct DualTrackEstimator {
    f: usize,
    result: DualTrackResult,
    /// Number of text tokens covered by emitted phonemes.
    covered: usize,
}

impl DualTrackEstimator {
    pub fn new(f: usize) -> Result<Self> {
        if f == 0 {
            return Err(Error::Config("estimator f must be >= 1".into()));
        }
        Ok(Self {
            f,
            result: DualTrackResult::default(),
            covered: 0,
        })
    }

    pub fn result(&self) -> &DualTrackResult {
        &self.result
    }

    pub fn covered(&self) -> usize {
        self.covered
    }

    /// One estimation round over `text` (all text seen so far). On the final
    /// round every remaining phoneme is emitted. Returns the number of newly
    /// emitted phonemes.
    pub fn advance(&mut self, agent: &mut dyn Agent, text: &[Token], is_final: bool) -> Result<usize> {
        if text.is_empty() {
            return Ok(0);
        }
        let resp = agent.call(&AgentRequest::dual_decode(text, &self.result.phonemes))?;
        let prosody = resp.aux_tokens.clone().unwrap_or_default();
        if prosody.len() != resp.tokens.len() {
            return Err(Error::TrackLengthMismatch {
                phonemes: resp.tokens.len(),
                prosody: prosody.len(),
            });
        }
        if let Some(bad) = prosody.iter().find(|s| !prosody::is_valid(s)) {
            return Err(Error::InvalidProsodySymbol(bad.clone()));
        }
        let frames = text.len();
        let hyp = checked_hypothesis(resp, frames, &self.result.phonemes, AttentionAggregation::Given)?;
        let start = self.result.phonemes.len();
        let count = if is_final {
            hyp.tokens.len() - start
        } else {
            alignatt_round(&hyp, frames, &self.result.phonemes, self.f)?
                .emitted
                .len()
        };
        let end = start + count;
        self.result.phonemes.extend_from_slice(&hyp.tokens[start..end]);
        self.result.prosody.extend_from_slice(&prosody[start..end]);
        if is_final {
            self.covered = frames;
        } else if let Some(att) = &hyp.attention {
            let reach = att[start..end].iter().filter_map(|r| alignment(r)).max().unwrap_or(0);
            self.covered = self.covered.max(reach);
        }
        Ok(count)
    }
}

/// Runs the estimator incrementally, one more text token per round.
pub fn estimate_dual_tracks(text: &[Token], agent: &mut dyn Agent, f: usize) -> Result<DualTrackResult> {
    let mut est = DualTrackEstimator::new(f)?;
    if text.is_empty() {
        return Ok(DualTrackResult::default());
    }
    agent.reset()?;
    for end in 1..=text.len() {
        est.advance(agent, &text[..end], end == text.len())?;
    }
    Ok(est.result)
}

fn commit_time(c: &crate::timeline::CommitEvent, mode: DelayMode) -> f64 {
    match mode {
        DelayMode::Ideal => c.ideal_delay_ms,
        DelayMode::ComputationAware => c.wall_delay_ms,
    }
}

/// Turns a finalized text log into TTS requests.
pub fn handoff(
    log: &EmissionLog,
    policy: &HandoffPolicy,
    mode: DelayMode,
    agent: Option<&mut dyn Agent>,
) -> Result<Vec<TtsRequest>> {
    if !log.is_finalized() {
        return Err(Error::NotFinalized);
    }
    let commits = log.commits();
    let mut requests = Vec::new();
    match policy.kind {
        HandoffKind::Immediate => {
            for c in commits {
                requests.push(TtsRequest {
                    tokens: c.tokens.clone(),
                    requested_at_ms: commit_time(c, mode),
                });
            }
        }
        HandoffKind::BoundaryGated => {
            let mut buffer: Vec<Token> = Vec::new();
            for (i, c) in commits.iter().enumerate() {
                buffer.extend(c.tokens.iter().cloned());
                let at_boundary = buffer.last().is_some_and(|t| policy.is_boundary(t));
                if at_boundary || i + 1 == commits.len() {
                    requests.push(TtsRequest {
                        tokens: std::mem::take(&mut buffer),
                        requested_at_ms: commit_time(c, mode),
                    });
                }
            }
        }
        HandoffKind::EstimatorGated => {
            let agent = agent.ok_or(Error::MissingAgent)?;
            agent.reset()?;
            let mut est = DualTrackEstimator::new(policy.estimator_f)?;
            let mut text: Vec<Token> = Vec::new();
            let mut flushed = 0;
            for (i, c) in commits.iter().enumerate() {
                text.extend(c.tokens.iter().cloned());
                est.advance(agent, &text, i + 1 == commits.len())?;
                if est.covered() > flushed {
                    requests.push(TtsRequest {
                        tokens: text[flushed..est.covered()].to_vec(),
                        requested_at_ms: commit_time(c, mode),
                    });
                    flushed = est.covered();
                }
            }
        }
    }
    Ok(requests)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DurationModel {
    /// `ms` per whitespace-separated word.
    PerWord { ms: f64 },
    /// `ms` per started pair of non-space characters.
    PerCharBigram { ms: f64 },
    /// Per-character bigrams if the text contains CJK characters, else words.
    Auto { ms: f64 },
    /// Explicit per-token durations, `default_ms` for unknown tokens.
    Table { ms: HashMap<String, f64>, default_ms: f64 },
}

impl Default for DurationModel {
    fn default() -> Self {
        DurationModel::Auto { ms: 300.0 }
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x3040..=0x30ff | 0x3400..=0x4dbf | 0x4e00..=0x9fff | 0xff00..=0xffef)
}

impl DurationModel {
    pub fn duration_ms(&self, tokens: &[Token]) -> Result<f64> {
        let words = || tokens.iter().map(|t| t.split_whitespace().count()).sum::<usize>();
        let bigrams = || {
            let chars = tokens
                .iter()
                .flat_map(|t| t.chars())
                .filter(|c| !c.is_whitespace())
                .count();
            chars.div_ceil(2)
        };
        let d = match self {
            DurationModel::PerWord { ms } => *ms * words().max(1) as f64,
            DurationModel::PerCharBigram { ms } => *ms * bigrams().max(1) as f64,
            DurationModel::Auto { ms } => {
                let units = if tokens.iter().any(|t| t.chars().any(is_cjk)) {
                    bigrams()
                } else {
                    words()
                };
                *ms * units.max(1) as f64
            }
            DurationModel::Table { ms, default_ms } => {
                tokens.iter().map(|t| ms.get(t).copied().unwrap_or(*default_ms)).sum()
            }
        };
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Config(format!("speech duration must be positive, got {d}")));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechConfig {
    pub duration: DurationModel,
    /// Synthesis time added to every request before it can play.
    pub tts_latency_ms: f64,
}

impl Default for SpeechConfig {
    fn default() -> Self {
        Self {
            duration: DurationModel::default(),
            tts_latency_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechOutputSegment {
    pub text: Vec<Token>,
    pub duration_ms: f64,
    pub requested_at_ms: f64,
    pub starts_at_ms: f64,
    pub ends_at_ms: f64,
}

/// Segments on the single speech output channel, in play order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelSchedule {
    pub segments: Vec<SpeechOutputSegment>,
}

impl ChannelSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues one segment: it starts once requested (plus synthesis time) and
    /// the channel is free.
    pub fn push(
        &mut self,
        text: Vec<Token>,
        requested_at_ms: f64,
        duration_ms: f64,
        tts_latency_ms: f64,
    ) -> Result<&SpeechOutputSegment> {
        if let Some(prev) = self.segments.last() {
            if requested_at_ms < prev.requested_at_ms {
                return Err(Error::NonMonotoneRequests {
                    previous: prev.requested_at_ms,
                    next: requested_at_ms,
                });
            }
        }
        if !(duration_ms > 0.0) || !duration_ms.is_finite() {
            return Err(Error::Config(format!(
                "speech duration must be positive, got {duration_ms}"
            )));
        }
        let ready = requested_at_ms + tts_latency_ms;
        let starts_at_ms = self.segments.last().map_or(ready, |p| ready.max(p.ends_at_ms));
        self.segments.push(SpeechOutputSegment {
            text,
            duration_ms,
            requested_at_ms,
            starts_at_ms,
            ends_at_ms: starts_at_ms + duration_ms,
        });
        Ok(self.segments.last().expect("just pushed"))
    }

    pub fn total_speech_ms(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_ms).sum()
    }

    /// True if some segment had to wait for the channel.
    pub fn has_queueing(&self, tts_latency_ms: f64) -> bool {
        self.segments
            .iter()
            .any(|s| s.starts_at_ms > s.requested_at_ms + tts_latency_ms)
    }

    pub fn is_overlap_free(&self) -> bool {
        self.segments.windows(2).all(|w| w[1].starts_at_ms >= w[0].ends_at_ms)
    }

    /// `(Start_Offset, End_Offset)`: first speech onset, and last speech end
    /// relative to the end of the source.
    pub fn offsets(&self, source_duration_ms: f64) -> Result<(f64, f64)> {
        let (first, last) = match (self.segments.first(), self.segments.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::EmptyTimeline),
        };
        Ok((first.starts_at_ms, last.ends_at_ms - source_duration_ms))
    }

    /// ATD with every played segment cut into `segment_ms` pieces.
    pub fn atd(&self, source_duration_ms: f64, cfg: &AtdConfig) -> Result<f64> {
        cfg.validate()?;
        let target: Vec<f64> = self
            .segments
            .iter()
            .flat_map(|s| segment_interval(s.starts_at_ms, s.ends_at_ms, cfg))
            .collect();
        compute_atd(&segment_source(source_duration_ms, cfg), &target)
    }
}

/// Schedules requests with durations from the duration model.
pub fn schedule_speech(requests: &[TtsRequest], cfg: &SpeechConfig) -> Result<ChannelSchedule> {
    let durations = requests
        .iter()
        .map(|r| cfg.duration.duration_ms(&r.tokens))
        .collect::<Result<Vec<_>>>()?;
    schedule_with_durations(requests, &durations, cfg.tts_latency_ms)
}

pub fn schedule_with_durations(
    requests: &[TtsRequest],
    durations: &[f64],
    tts_latency_ms: f64,
) -> Result<ChannelSchedule> {
    if requests.len() != durations.len() {
        return Err(Error::Config(format!(
            "{} requests but {} durations",
            requests.len(),
            durations.len()
        )));
    }
    let mut schedule = ChannelSchedule::new();
    for (r, &d) in requests.iter().zip(durations) {
        schedule.push(r.tokens.clone(), r.requested_at_ms, d, tts_latency_ms)?;
    }
    Ok(schedule)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub label: String,
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub name: String,
    pub spans: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingDiagram {
    pub source_duration_ms: f64,
    pub lanes: Vec<Lane>,
}

/// Three lanes: source speech, text commits (each box runs from the
/// previous commit to this one), and played speech.
pub fn render_timing_diagram(log: &EmissionLog, schedule: &ChannelSchedule, mode: DelayMode) -> TimingDiagram {
    let total = log.source_duration_ms;
    let commits = log.commits();
    let mut source = Vec::new();
    if !commits.is_empty() && total > 0.0 {
        source.push(Span {
            label: "source".into(),
            start_ms: 0.0,
            end_ms: total,
        });
    }
    let mut prev = 0.0;
    let text = commits
        .iter()
        .map(|c| {
            let t = commit_time(c, mode);
            let span = Span {
                label: c.tokens.join(" "),
                start_ms: prev,
                end_ms: t,
            };
            prev = t;
            span
        })
        .collect();
    let speech = schedule
        .segments
        .iter()
        .map(|s| Span {
            label: s.text.join(" "),
            start_ms: s.starts_at_ms,
            end_ms: s.ends_at_ms,
        })
        .collect();
    TimingDiagram {
        source_duration_ms: total,
        lanes: vec![
            Lane {
                name: "source".into(),
                spans: source,
            },
            Lane {
                name: "text".into(),
                spans: text,
            },
            Lane {
                name: "speech".into(),
                spans: speech,
            },
        ],
    }
}

const TEXT_WIDTH: usize = 64;

impl TimingDiagram {
    pub fn end_ms(&self) -> f64 {
        self.lanes
            .iter()
            .flat_map(|l| l.spans.iter().map(|s| s.end_ms))
            .fold(self.source_duration_ms, f64::max)
    }

    /// Monospaced render: one bar per lane, then the spans listed with times.
    pub fn render_text(&self) -> String {
        let end = self.end_ms();
        let col = |t: f64| -> usize {
            if end <= 0.0 {
                0
            } else {
                ((t / end) * TEXT_WIDTH as f64).round() as usize
            }
        };
        let mut out = String::new();
        let _ = writeln!(out, "time 0 .. {end:.1} ms, {TEXT_WIDTH} columns");
        for lane in &self.lanes {
            let mut bar = vec![' '; TEXT_WIDTH + 1];
            for s in &lane.spans {
                let (a, b) = (col(s.start_ms), col(s.end_ms).max(col(s.start_ms)));
                for c in bar.iter_mut().take(b + 1).skip(a) {
                    *c = '=';
                }
                bar[a] = '|';
                bar[b] = '|';
            }
            let bar: String = bar.into_iter().collect();
            let _ = writeln!(out, "{:<7}{}", lane.name, bar.trim_end());
        }
        for lane in &self.lanes {
            for s in &lane.spans {
                let _ = writeln!(
                    out,
                    "  {:<7}{:>10.1} {:>10.1}  {}",
                    lane.name, s.start_ms, s.end_ms, s.label
                );
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentResponse, RequestKind, ToyRomanizer};

    fn toks(s: &str) -> Vec<Token> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn log_of(commits: &[(&str, f64)], total: f64) -> EmissionLog {
        let mut log = EmissionLog::new(total);
        for (t, d) in commits {
            log.record_commit(toks(t), *d, *d).unwrap();
        }
        log.finalize(total).unwrap();
        log
    }

    fn req(at: f64) -> TtsRequest {
        TtsRequest {
            tokens: toks("x"),
            requested_at_ms: at,
        }
    }

    #[test]
    fn queueing_fixture() {
        let s = schedule_with_durations(&[req(1000.0), req(1500.0)], &[900.0, 600.0], 0.0).unwrap();
        let spans: Vec<_> = s.segments.iter().map(|x| (x.starts_at_ms, x.ends_at_ms)).collect();
        assert_eq!(spans, vec![(1000.0, 1900.0), (1900.0, 2500.0)]);
        assert!(s.has_queueing(0.0));
        let s = schedule_with_durations(&[req(1000.0), req(2500.0)], &[900.0, 600.0], 0.0).unwrap();
        let spans: Vec<_> = s.segments.iter().map(|x| (x.starts_at_ms, x.ends_at_ms)).collect();
        assert_eq!(spans, vec![(1000.0, 1900.0), (2500.0, 3100.0)]);
        assert!(!s.has_queueing(0.0));
    }

    #[test]
    fn single_request_starts_on_time() {
        let s = schedule_speech(&[req(1234.5)], &SpeechConfig::default()).unwrap();
        assert_eq!(s.segments[0].starts_at_ms, 1234.5);
        assert_eq!(s.segments[0].duration_ms, 300.0);
    }

    #[test]
    fn rejects_non_monotone_requests() {
        assert!(matches!(
            schedule_with_durations(&[req(2000.0), req(1000.0)], &[1.0, 1.0], 0.0),
            Err(Error::NonMonotoneRequests { .. })
        ));
    }

    #[test]
    fn durations() {
        let words = DurationModel::default();
        assert_eq!(words.duration_ms(&toks("the quick fox")).unwrap(), 900.0);
        // 5 characters -> 3 started bigrams
        assert_eq!(words.duration_ms(&toks("こんにちは")).unwrap(), 900.0);
        let table = DurationModel::Table {
            ms: [("a".to_string(), 100.0)].into_iter().collect(),
            default_ms: 50.0,
        };
        assert_eq!(table.duration_ms(&toks("a b a")).unwrap(), 250.0);
    }

    #[test]
    fn immediate_handoff() {
        let log = log_of(&[("A", 1000.0), ("B", 2000.0), ("C", 3000.0)], 3000.0);
        let r = handoff(&log, &HandoffPolicy::default(), DelayMode::Ideal, None).unwrap();
        let times: Vec<_> = r.iter().map(|x| x.requested_at_ms).collect();
        assert_eq!(times, vec![1000.0, 2000.0, 3000.0]);
    }

    #[test]
    fn boundary_gating_merges_split_word() {
        let log = log_of(
            &[("フォーミ", 1000.0), ("ュラワン 。", 2000.0), ("予算", 3000.0)],
            3000.0,
        );
        let policy = HandoffPolicy::new(HandoffKind::BoundaryGated);
        let r = handoff(&log, &policy, DelayMode::Ideal, None).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].tokens, toks("フォーミ ュラワン 。"));
        assert_eq!(r[0].requested_at_ms, 2000.0);
        // final flush releases the tail without a boundary
        assert_eq!(r[1].tokens, toks("予算"));
    }

    #[test]
    fn estimator_gating_needs_agent() {
        let log = log_of(&[("A", 1000.0)], 1000.0);
        let policy = HandoffPolicy::new(HandoffKind::EstimatorGated);
        assert!(matches!(
            handoff(&log, &policy, DelayMode::Ideal, None),
            Err(Error::MissingAgent)
        ));
    }

    #[test]
    fn estimator_gating_holds_last_token() {
        let log = log_of(&[("こんにちは さん", 1000.0), ("です 。", 2000.0)], 2500.0);
        let policy = HandoffPolicy::new(HandoffKind::EstimatorGated);
        let mut agent = ToyRomanizer::default();
        let r = handoff(&log, &policy, DelayMode::Ideal, Some(&mut agent)).unwrap();
        assert_eq!(r[0].tokens, toks("こんにちは"));
        let all: Vec<Token> = r.iter().flat_map(|x| x.tokens.clone()).collect();
        assert_eq!(all, log.output_tokens());
    }

    #[test]
    fn greeting_tracks() {
        let mut agent = ToyRomanizer::default();
        let r = estimate_dual_tracks(&toks("こんにちは"), &mut agent, 1).unwrap();
        assert_eq!(r.phonemes, toks("k o N n i ch i w a"));
        assert!(r.prosody.iter().all(|p| p == prosody::BLANK));
        assert_eq!(
            estimate_dual_tracks(&[], &mut agent, 1).unwrap(),
            DualTrackResult::default()
        );
    }

    struct Lopsided;

    impl Agent for Lopsided {
        fn call(&mut self, request: &AgentRequest) -> Result<AgentResponse> {
            Ok(match request.kind {
                RequestKind::DualDecode => AgentResponse {
                    tokens: toks("a b"),
                    aux_tokens: Some(toks("_")),
                    attention: Some(vec![vec![1.0]; 2]),
                    ..Default::default()
                },
                _ => AgentResponse::default(),
            })
        }
    }

    #[test]
    fn track_length_mismatch() {
        assert!(matches!(
            estimate_dual_tracks(&toks("x"), &mut Lopsided, 1),
            Err(Error::TrackLengthMismatch {
                phonemes: 2,
                prosody: 1
            })
        ));
    }

    #[test]
    fn diagram_lanes() {
        let log = log_of(&[("A B", 1000.0)], 1000.0);
        let s = schedule_with_durations(
            &[TtsRequest {
                tokens: toks("A B"),
                requested_at_ms: 1000.0,
            }],
            &[600.0],
            0.0,
        )
        .unwrap();
        let d = render_timing_diagram(&log, &s, DelayMode::Ideal);
        assert_eq!(d.lanes.len(), 3);
        assert!(d.lanes.iter().all(|l| l.spans.len() == 1));
        assert_eq!(d.render_text(), d.render_text());

        let mut empty = EmissionLog::new(1000.0);
        empty.finalize(1000.0).unwrap();
        let d = render_timing_diagram(&empty, &ChannelSchedule::new(), DelayMode::Ideal);
        assert!(d.lanes.iter().all(|l| l.spans.is_empty()));
        let back: TimingDiagram = serde_json::from_str(&d.to_json().unwrap()).unwrap();
        assert_eq!(back, d);
    }
}
