//! Aligned toy transducer: a deterministic agent whose ground-truth
//! alignments are known, so both policies can be brute-force checked.

use serde::{Deserialize, Serialize};

use super::{Agent, AgentRequest, AgentResponse, RequestKind};
use crate::error::{Error, Result};
use crate::timeline::Token;

/// Number of distinct decoys a perturbed token can turn into.
pub const DECOY_VARIANTS: u64 = 2;

/// One target token aligned to source frames `start..=end` (1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToySpan {
    pub start: usize,
    pub end: usize,
    pub token: Token,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyTransducerSpec {
    /// Source length in frames; decoding with all of them is the offline decode.
    pub source_frames: usize,
    pub entries: Vec<ToySpan>,
    /// Trailing tokens whose span ends within this many frames of the
    /// received boundary are replaced by decoys (at most this many tokens).
    #[serde(default)]
    pub instability: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ToyTransducerSpec {
    /// Stable spec from span end frames, tokens named `t1, t2, ...`.
    pub fn from_ends(source_frames: usize, ends: &[usize]) -> Self {
        let mut prev = 0;
        let entries = ends
            .iter()
            .enumerate()
            .map(|(i, &end)| {
                let span = ToySpan {
                    start: (prev + 1).min(end),
                    end,
                    token: format!("t{}", i + 1),
                };
                prev = end;
                span
            })
            .collect();
        Self {
            source_frames,
            entries,
            instability: 0,
            seed: 0,
        }
    }

    pub fn with_instability(mut self, k: usize, seed: u64) -> Self {
        self.instability = k;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev_start = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.start == 0 || e.start > e.end || e.end > self.source_frames {
                return Err(Error::Config(format!(
                    "toy span {i} ({}..={}) must satisfy 1 <= start <= end <= {}",
                    e.start, e.end, self.source_frames
                )));
            }
            if e.start < prev_start {
                return Err(Error::Config(format!("toy span {i} starts before its predecessor")));
            }
            prev_start = e.start;
        }
        Ok(())
    }

    /// The full-source decode.
    pub fn offline_tokens(&self) -> Vec<Token> {
        self.entries.iter().map(|e| e.token.clone()).collect()
    }

    /// Longest prefix of entries whose span has been fully received.
    pub fn available(&self, frames: usize) -> usize {
        self.entries.iter().take_while(|e| e.end <= frames).count()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Decoy for the token at `index` (0-based) when decoded with `frames` frames.
fn decoy(token: &str, seed: u64, index: usize, frames: usize) -> Token {
    let h = splitmix64(splitmix64(splitmix64(seed) ^ index as u64) ^ frames as u64);
    format!("{token}~{}", h % DECOY_VARIANTS)
}

/// True if `candidate` is `token` itself or one of its decoys.
pub fn is_decoy_of(candidate: &str, token: &str) -> bool {
    candidate == token
        || candidate
            .strip_prefix(token)
            .and_then(|rest| rest.strip_prefix('~'))
            .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

/// Decode with `frames` source frames under the committed-prefix constraint.
///
/// Returns the tokens whose span ends at or before `frames`. Of those, the
/// last `min(k, count)` are replaced by decoys when their span ends within `k`
/// frames of the boundary, unless the whole source has been read. Attention
/// rows are one-hot at each token's span-end frame.
pub fn toy_decode(spec: &ToyTransducerSpec, frames: usize, committed: &[Token]) -> Result<crate::timeline::Hypothesis> {
    let count = spec.available(frames);
    if committed.len() > count {
        return Err(Error::PrefixConflict { position: count });
    }
    let k = spec.instability;
    let full = frames >= spec.source_frames;
    let mut tokens: Vec<Token> = spec.entries[..count]
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let in_tail = i + k.min(count) >= count;
            if !full && k > 0 && in_tail && e.end + k >= frames {
                decoy(&e.token, spec.seed, i, frames)
            } else {
                e.token.clone()
            }
        })
        .collect();
    for (i, c) in committed.iter().enumerate() {
        if !is_decoy_of(c, &spec.entries[i].token) {
            return Err(Error::PrefixConflict { position: i });
        }
        tokens[i] = c.clone();
    }
    let attention = spec.entries[..count]
        .iter()
        .map(|e| {
            let mut row = vec![0.0; frames];
            row[e.end - 1] = 1.0;
            row
        })
        .collect();
    Ok(crate::timeline::Hypothesis::with_attention(tokens, attention))
}

/// In-process agent backed by a [`ToyTransducerSpec`].
#[derive(Debug, Clone)]
pub struct ToyAgent {
    spec: ToyTransducerSpec,
    /// Simulated compute time per decode, reported as `compute_ms`.
    pub reported_compute_ms: Option<f64>,
    /// Real sleep per decode, for exercising measured clocks.
    pub sleep: Option<std::time::Duration>,
    pub decode_calls: usize,
}

impl ToyAgent {
    pub fn new(spec: ToyTransducerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            reported_compute_ms: None,
            sleep: None,
            decode_calls: 0,
        })
    }

    pub fn spec(&self) -> &ToyTransducerSpec {
        &self.spec
    }
}

impl Agent for ToyAgent {
    fn call(&mut self, request: &AgentRequest) -> Result<AgentResponse> {
        match request.kind {
            RequestKind::Decode => {
                self.decode_calls += 1;
                if let Some(d) = self.sleep {
                    std::thread::sleep(d);
                }
                let hyp = toy_decode(&self.spec, request.frames_available, &request.committed_prefix)?;
                Ok(AgentResponse {
                    tokens: hyp.tokens,
                    attention: hyp.attention,
                    compute_ms: self.reported_compute_ms,
                    ..Default::default()
                })
            }
            RequestKind::DualDecode => Err(Error::ProtocolError(
                "toy transducer does not support dual_decode".into(),
            )),
            RequestKind::Reset | RequestKind::Close => Ok(AgentResponse::default()),
        }
    }
}
