//! Timed sources, hypotheses and emission logs.
//!
//! Every latency metric in this crate consumes an [`EmissionLog`]: the ordered
//! list of irreversible commits a policy made during one session, each stamped
//! with the source time consumed (`d`) and the elapsed wall-clock time (`c`).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target-side token. Tokens are compared by exact string equality.
pub type Token = String;

/// Tolerance for comparisons on millisecond timestamps.
pub const TIME_EPS_MS: f64 = 1e-6;

/// Longest sequence that is a prefix of both `a` and `b`.
pub fn lcp<'a, T: PartialEq>(a: &'a [T], b: &[T]) -> &'a [T] {
    let len = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    &a[..len]
}

/// Longest common prefix of a non-empty set of sequences.
pub fn lcp_all<'a, T: PartialEq + 'a>(seqs: impl IntoIterator<Item = &'a [T]>) -> &'a [T] {
    let mut iter = seqs.into_iter();
    let Some(first) = iter.next() else {
        return &[];
    };
    iter.fold(first, |acc, s| lcp(acc, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub duration_ms: f64,
    pub payload_id: u64,
}

/// A timed source. Only timing is modeled; payloads are opaque ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceStream {
    frames: Vec<Frame>,
    frame_ends: Vec<f64>,
    total_duration_ms: f64,
    frame_ms: f64,
    pub reference_tokens: Option<Vec<Token>>,
}

impl SourceStream {
    /// Uniform frames of `frame_ms`, with a shorter last frame when
    /// `total_duration_ms` is not a multiple of it.
    pub fn uniform(total_duration_ms: f64, frame_ms: f64) -> Result<Self> {
        if !(frame_ms > 0.0) || !frame_ms.is_finite() {
            return Err(Error::Config(format!("frame_ms must be positive, got {frame_ms}")));
        }
        if !(total_duration_ms >= 0.0) || !total_duration_ms.is_finite() {
            return Err(Error::Config(format!(
                "source duration must be finite and non-negative, got {total_duration_ms}"
            )));
        }
        let count = ceil_div(total_duration_ms, frame_ms);
        let frames = (0..count)
            .map(|i| {
                let start = i as f64 * frame_ms;
                Frame {
                    duration_ms: (total_duration_ms - start).min(frame_ms),
                    payload_id: i as u64,
                }
            })
            .collect();
        Self::from_frames(frames, frame_ms)
    }

    /// Exactly `count` equal frames spanning `total_duration_ms`.
    pub fn with_frame_count(total_duration_ms: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Self::from_frames(Vec::new(), 1.0);
        }
        let frame_ms = total_duration_ms / count as f64;
        let frames = (0..count)
            .map(|i| Frame {
                duration_ms: frame_ms,
                payload_id: i as u64,
            })
            .collect();
        Self::from_frames(frames, frame_ms)
    }

    pub fn from_frames(frames: Vec<Frame>, frame_ms: f64) -> Result<Self> {
        let mut frame_ends = Vec::with_capacity(frames.len());
        let mut acc = 0.0;
        for f in &frames {
            if !(f.duration_ms > 0.0) {
                return Err(Error::Config(format!(
                    "frame durations must be positive, got {}",
                    f.duration_ms
                )));
            }
            acc += f.duration_ms;
            frame_ends.push(acc);
        }
        Ok(Self {
            frames,
            frame_ends,
            total_duration_ms: acc,
            frame_ms,
            reference_tokens: None,
        })
    }

    pub fn with_reference(mut self, reference: Vec<Token>) -> Self {
        self.reference_tokens = Some(reference);
        self
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn total_duration_ms(&self) -> f64 {
        self.total_duration_ms
    }

    pub fn frame_ms(&self) -> f64 {
        self.frame_ms
    }

    /// Number of frames fully received by source time `t_ms`.
    pub fn frames_available(&self, t_ms: f64) -> usize {
        self.frame_ends.partition_point(|&end| end <= t_ms + TIME_EPS_MS)
    }

    /// Chunk boundaries `chunk_ms, 2*chunk_ms, ...` capped at, and always ending with, T.
    pub fn chunk_boundaries(&self, chunk_ms: f64) -> Vec<f64> {
        chunk_boundaries(self.total_duration_ms, chunk_ms)
    }
}

pub(crate) fn ceil_div(total: f64, step: f64) -> usize {
    let q = total / step;
    let r = q.round();
    if (q - r).abs() < 1e-9 {
        r as usize
    } else {
        q.ceil() as usize
    }
}

/// `ceil(T / chunk_ms)` boundaries; the last one is exactly `T`.
pub fn chunk_boundaries(total_ms: f64, chunk_ms: f64) -> Vec<f64> {
    let count = ceil_div(total_ms, chunk_ms).max(1);
    (1..=count)
        .map(|k| if k == count { total_ms } else { k as f64 * chunk_ms })
        .collect()
}

/// A token sequence with optional per-token attention over source frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Hypothesis {
    pub tokens: Vec<Token>,
    /// One row per token, one column per available source frame.
    pub attention: Option<Vec<Vec<f64>>>,
}

impl Hypothesis {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self {
            tokens,
            attention: None,
        }
    }

    pub fn with_attention(tokens: Vec<Token>, attention: Vec<Vec<f64>>) -> Self {
        Self {
            tokens,
            attention: Some(attention),
        }
    }

    /// Drops everything from the first occurrence of `eos` on.
    pub fn truncate_at(&mut self, eos: &str) {
        if let Some(pos) = self.tokens.iter().position(|t| t == eos) {
            self.tokens.truncate(pos);
            if let Some(att) = &mut self.attention {
                att.truncate(pos);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitEvent {
    pub tokens: Vec<Token>,
    /// Source time consumed when the commit happened.
    #[serde(rename = "d")]
    pub ideal_delay_ms: f64,
    /// Elapsed wall clock at commit, computation included.
    #[serde(rename = "c")]
    pub wall_delay_ms: f64,
}

/// Which per-token delay a metric reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayMode {
    Ideal,
    ComputationAware,
}

/// Per-session record of committed target tokens.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmissionLog {
    pub source_duration_ms: f64,
    commits: Vec<CommitEvent>,
    pub reference_tokens: Option<Vec<Token>>,
    finalized: bool,
}

impl EmissionLog {
    pub fn new(source_duration_ms: f64) -> Self {
        Self {
            source_duration_ms,
            ..Self::default()
        }
    }

    pub fn with_reference(mut self, reference: Option<Vec<Token>>) -> Self {
        self.reference_tokens = reference;
        self
    }

    pub fn commits(&self) -> &[CommitEvent] {
        &self.commits
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn token_count(&self) -> usize {
        self.commits.iter().map(|c| c.tokens.len()).sum()
    }

    /// All committed tokens in emission order.
    pub fn output_tokens(&self) -> Vec<Token> {
        self.commits.iter().flat_map(|c| c.tokens.iter().cloned()).collect()
    }

    pub fn record_commit(&mut self, tokens: Vec<Token>, ideal_delay_ms: f64, wall_delay_ms: f64) -> Result<()> {
        if self.finalized {
            return Err(Error::Finalized);
        }
        if tokens.is_empty() {
            return Err(Error::EmptyCommit);
        }
        if let Some(last) = self.commits.last() {
            if ideal_delay_ms < last.ideal_delay_ms {
                return Err(Error::NonMonotoneDelay {
                    what: "ideal delay",
                    previous: last.ideal_delay_ms,
                    next: ideal_delay_ms,
                });
            }
            if wall_delay_ms < last.wall_delay_ms {
                return Err(Error::NonMonotoneDelay {
                    what: "wall delay",
                    previous: last.wall_delay_ms,
                    next: wall_delay_ms,
                });
            }
        }
        if wall_delay_ms < ideal_delay_ms - TIME_EPS_MS {
            return Err(Error::WallBeforeIdeal {
                ideal: ideal_delay_ms,
                wall: wall_delay_ms,
            });
        }
        self.commits.push(CommitEvent {
            tokens,
            ideal_delay_ms,
            wall_delay_ms: wall_delay_ms.max(ideal_delay_ms),
        });
        Ok(())
    }

    /// Closes the log at source duration `total_ms`. The last token is
    /// pinned to `d = T` (and `c >= T`): it counts as emitted with the full
    /// source read. If it shared an earlier commit with other tokens, it is
    /// split off into its own commit so the others keep their delays.
    pub fn finalize(&mut self, total_ms: f64) -> Result<()> {
        if self.finalized {
            return Err(Error::Finalized);
        }
        if let Some(bad) = self.commits.iter().find(|c| c.ideal_delay_ms > total_ms + TIME_EPS_MS) {
            return Err(Error::DelayExceedsSource {
                delay: bad.ideal_delay_ms,
                source_ms: total_ms,
            });
        }
        self.source_duration_ms = total_ms;
        if let Some(last) = self.commits.last_mut() {
            if last.ideal_delay_ms < total_ms && last.tokens.len() > 1 {
                let token = last.tokens.pop().expect("commit has several tokens");
                let wall_delay_ms = last.wall_delay_ms.max(total_ms);
                self.commits.push(CommitEvent {
                    tokens: vec![token],
                    ideal_delay_ms: total_ms,
                    wall_delay_ms,
                });
            } else {
                last.ideal_delay_ms = total_ms;
                last.wall_delay_ms = last.wall_delay_ms.max(total_ms);
            }
        }
        self.finalized = true;
        Ok(())
    }

    /// Flattened per-token delays: every token inherits its commit's delay.
    pub fn token_delays(&self, mode: DelayMode) -> Vec<f64> {
        self.commits
            .iter()
            .flat_map(|c| {
                let d = match mode {
                    DelayMode::Ideal => c.ideal_delay_ms,
                    DelayMode::ComputationAware => c.wall_delay_ms,
                };
                std::iter::repeat_n(d, c.tokens.len())
            })
            .collect()
    }

    pub fn to_record(&self) -> LogRecord {
        LogRecord {
            source_duration_ms: self.source_duration_ms,
            commits: self.commits.clone(),
            reference_tokens: self.reference_tokens.clone(),
        }
    }

    /// Rebuilds a finalized log from its record, re-checking every invariant.
    pub fn from_record(record: LogRecord) -> Result<Self> {
        let mut log = EmissionLog::new(record.source_duration_ms).with_reference(record.reference_tokens);
        for c in record.commits {
            log.record_commit(c.tokens, c.ideal_delay_ms, c.wall_delay_ms)?;
        }
        let t = record.source_duration_ms;
        if let Some(last) = log.commits.last() {
            if (last.ideal_delay_ms - t).abs() > TIME_EPS_MS {
                return Err(Error::Config(format!(
                    "last commit of a stored log must be at d = T ({} != {t})",
                    last.ideal_delay_ms
                )));
            }
        }
        log.finalize(t)?;
        Ok(log)
    }

    /// One compact JSON line (no trailing newline).
    pub fn to_json_line(&self) -> Result<String> {
        if !self.finalized {
            return Err(Error::NotFinalized);
        }
        Ok(serde_json::to_string(&self.to_record())?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Self::from_record(serde_json::from_str(line)?)
    }
}

/// On-disk form of one session: a single line of the `.jsonl` log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub source_duration_ms: f64,
    pub commits: Vec<CommitEvent>,
    pub reference_tokens: Option<Vec<Token>>,
}

pub fn write_logs<W: Write>(mut out: W, logs: &[EmissionLog]) -> Result<()> {
    for log in logs {
        let line = log.to_json_line()?;
        writeln!(out, "{line}").map_err(|e| Error::io("<log output>", e))?;
    }
    Ok(())
}

pub fn read_logs<R: BufRead>(input: R, path: &str) -> Result<Vec<EmissionLog>> {
    let mut logs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let log = EmissionLog::from_json_line(&line).map_err(|e| Error::ParseError {
            path: path.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        logs.push(log);
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Token> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn lcp_examples() {
        assert_eq!(lcp(&toks("A B C"), &toks("A B D")), toks("A B").as_slice());
        assert_eq!(lcp(&toks("A B"), &toks("A B")), toks("A B").as_slice());
        assert!(lcp(&toks(""), &toks("A")).is_empty());
        assert_eq!(
            lcp_all([toks("A B C").as_slice(), &toks("A B"), &toks("A X")]),
            toks("A").as_slice()
        );
    }

    #[test]
    fn record_commit_sequence() {
        let mut log = EmissionLog::new(0.0);
        log.record_commit(toks("A"), 1000.0, 1005.0).unwrap();
        assert_eq!(log.commits().len(), 1);
        log.record_commit(toks("B C"), 2000.0, 2100.0).unwrap();
        assert_eq!(log.commits().len(), 2);
        assert_eq!(log.token_count(), 3);
        let err = log.record_commit(toks("D"), 1500.0, 2200.0).unwrap_err();
        assert!(matches!(
            err,
            Error::NonMonotoneDelay {
                what: "ideal delay",
                ..
            }
        ));
        assert!(matches!(
            log.record_commit(vec![], 3000.0, 3000.0),
            Err(Error::EmptyCommit)
        ));
        assert!(matches!(
            log.record_commit(toks("E"), 2500.0, 2000.0),
            Err(Error::NonMonotoneDelay { what: "wall delay", .. })
        ));
        log.finalize(3000.0).unwrap();
        assert!(matches!(
            log.record_commit(toks("E"), 3000.0, 3000.0),
            Err(Error::Finalized)
        ));
    }

    #[test]
    fn finalize_cases() {
        let mut log = EmissionLog::new(0.0);
        for d in [1000.0, 2000.0, 3000.0] {
            log.record_commit(toks("x"), d, d).unwrap();
        }
        log.finalize(3000.0).unwrap();
        assert!(log.is_finalized());

        let mut log = EmissionLog::new(0.0);
        log.record_commit(toks("x"), 1000.0, 1000.0).unwrap();
        assert!(matches!(log.finalize(500.0), Err(Error::DelayExceedsSource { .. })));

        let mut log = EmissionLog::new(0.0);
        log.finalize(3000.0).unwrap();
        assert_eq!(log.token_count(), 0);
        assert!(log.is_finalized());
    }

    #[test]
    fn finalize_pins_last_token_to_source_end() {
        let mut log = EmissionLog::new(0.0);
        log.record_commit(toks("a b"), 0.0, 10.0).unwrap();
        log.record_commit(toks("c"), 0.0, 20.0).unwrap();
        log.finalize(3000.0).unwrap();
        assert_eq!(log.token_delays(DelayMode::Ideal), vec![0.0, 0.0, 3000.0]);
        assert_eq!(log.token_delays(DelayMode::ComputationAware), vec![10.0, 10.0, 3000.0]);

        let mut log = EmissionLog::new(0.0);
        log.record_commit(toks("a b c"), 1000.0, 1100.0).unwrap();
        log.finalize(3000.0).unwrap();
        assert_eq!(log.commits().len(), 2);
        assert_eq!(log.token_delays(DelayMode::Ideal), vec![1000.0, 1000.0, 3000.0]);
        assert_eq!(
            log.token_delays(DelayMode::ComputationAware),
            vec![1100.0, 1100.0, 3000.0]
        );
    }

    #[test]
    fn chunking() {
        assert_eq!(chunk_boundaries(3000.0, 1000.0), vec![1000.0, 2000.0, 3000.0]);
        assert_eq!(chunk_boundaries(2500.0, 1000.0), vec![1000.0, 2000.0, 2500.0]);
        assert_eq!(chunk_boundaries(500.0, 1000.0), vec![500.0]);
        let src = SourceStream::uniform(950.0, 100.0).unwrap();
        assert_eq!(src.frame_count(), 10);
        assert!((src.total_duration_ms() - 950.0).abs() < 1e-6);
        assert_eq!(src.frames_available(449.0), 4);
        assert_eq!(src.frames_available(950.0), 10);
    }

    #[test]
    fn json_line_schema() {
        let mut log = EmissionLog::new(0.0).with_reference(Some(toks("A B")));
        log.record_commit(toks("A"), 1000.0, 1005.0).unwrap();
        log.record_commit(toks("B"), 3000.0, 3050.5).unwrap();
        log.finalize(3000.0).unwrap();
        let line = log.to_json_line().unwrap();
        assert_eq!(
            line,
            r#"{"source_duration_ms":3000.0,"commits":[{"tokens":["A"],"d":1000.0,"c":1005.0},{"tokens":["B"],"d":3000.0,"c":3050.5}],"reference_tokens":["A","B"]}"#
        );
        let back = EmissionLog::from_json_line(&line).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_json_line().unwrap(), line);
    }
}
