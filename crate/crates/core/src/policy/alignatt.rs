//! AlignAtt: a token is emitted only if its attention argmax lies outside
//! the last `f` received source frames; the first token that fails the test
//! pauses generation until more source arrives.

use serde::{Deserialize, Serialize};

use super::Policy;
use crate::agents::{Agent, AttentionAggregation};
use crate::error::{Error, Result};
use crate::simulator::{run_session, ClockModel};
use crate::timeline::{EmissionLog, Hypothesis, SourceStream, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignAttConfig {
    /// Number of trailing frames treated as not yet usable.
    pub f: usize,
    pub chunk_ms: f64,
    #[serde(default)]
    pub attention_aggregation: AttentionAggregation,
    #[serde(default = "default_beam")]
    pub beam: u32,
}

fn default_beam() -> u32 {
    crate::agents::DEFAULT_BEAM
}

impl Default for AlignAttConfig {
    fn default() -> Self {
        Self {
            f: 1,
            chunk_ms: 800.0,
            attention_aggregation: AttentionAggregation::Given,
            beam: default_beam(),
        }
    }
}

impl AlignAttConfig {
    pub fn new(f: usize, chunk_ms: f64) -> Self {
        Self {
            f,
            chunk_ms,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.f == 0 {
            return Err(Error::Config("AlignAtt margin f must be >= 1".into()));
        }
        if !(self.chunk_ms > 0.0) || !self.chunk_ms.is_finite() {
            return Err(Error::Config(format!(
                "chunk_ms must be positive, got {}",
                self.chunk_ms
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignAttRoundResult {
    pub emitted: Vec<Token>,
    pub stopped: bool,
    /// 1-based source frame the stopping token aligned to.
    pub stop_token_alignment: Option<usize>,
}

/// 1-based position of the row maximum; ties go to the earliest frame.
pub fn alignment(row: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in row.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1)
}

/// One AlignAtt round over the tokens following `committed`.
pub fn alignatt_round(hyp: &Hypothesis, frames: usize, committed: &[Token], f: usize) -> Result<AlignAttRoundResult> {
    let attention = hyp.attention.as_ref().ok_or(Error::MissingAttention)?;
    if let Some(position) = committed
        .iter()
        .enumerate()
        .position(|(i, c)| hyp.tokens.get(i) != Some(c))
    {
        return Err(Error::PrefixConflict { position });
    }
    let limit = frames.saturating_sub(f);
    let mut emitted = Vec::new();
    for (token, row) in hyp.tokens.iter().zip(attention).skip(committed.len()) {
        if token == crate::agents::EOS {
            return Ok(AlignAttRoundResult {
                emitted,
                stopped: true,
                stop_token_alignment: None,
            });
        }
        match alignment(row) {
            Some(a) if a <= limit => emitted.push(token.clone()),
            a => {
                return Ok(AlignAttRoundResult {
                    emitted,
                    stopped: true,
                    stop_token_alignment: a,
                })
            }
        }
    }
    Ok(AlignAttRoundResult {
        emitted,
        stopped: false,
        stop_token_alignment: None,
    })
}

#[derive(Debug, Clone)]
pub struct AlignAttState {
    cfg: AlignAttConfig,
    committed: Vec<Token>,
    pub last_round: Option<AlignAttRoundResult>,
}

impl AlignAttState {
    pub fn new(cfg: AlignAttConfig) -> Self {
        Self {
            cfg,
            committed: Vec::new(),
            last_round: None,
        }
    }
}

impl Policy for AlignAttState {
    fn step(&mut self, hyp: &Hypothesis, frames: usize, is_final: bool) -> Result<Vec<Token>> {
        if is_final {
            if let Some(position) = self
                .committed
                .iter()
                .enumerate()
                .position(|(i, c)| hyp.tokens.get(i) != Some(c))
            {
                return Err(Error::PrefixConflict { position });
            }
            let rest = hyp.tokens[self.committed.len()..].to_vec();
            self.committed.extend(rest.iter().cloned());
            self.last_round = Some(AlignAttRoundResult {
                emitted: rest.clone(),
                stopped: false,
                stop_token_alignment: None,
            });
            return Ok(rest);
        }
        let round = alignatt_round(hyp, frames, &self.committed, self.cfg.f)?;
        self.committed.extend(round.emitted.iter().cloned());
        let emitted = round.emitted.clone();
        self.last_round = Some(round);
        Ok(emitted)
    }

    fn committed(&self) -> &[Token] {
        &self.committed
    }
}

/// Runs one AlignAtt session.
pub fn run_alignatt(
    source: &SourceStream,
    agent: &mut dyn Agent,
    cfg: &AlignAttConfig,
    clock: &ClockModel,
) -> Result<EmissionLog> {
    run_session(source, agent, &super::PolicyConfig::AlignAtt(cfg.clone()), clock)
}
