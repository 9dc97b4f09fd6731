//! Streaming decoding policies.
//!
//! A policy sees one hypothesis per chunk and decides which of its tokens
//! become irreversible commits.

pub mod alignatt;
pub mod la;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::timeline::{Hypothesis, Token};

pub use alignatt::{alignatt_round, run_alignatt, AlignAttConfig, AlignAttRoundResult, AlignAttState};
pub use la::{la_commit_step, run_la, LaConfig, LaState};

/// Per-session policy state driven by the simulator.
pub trait Policy {
    /// Consumes the hypothesis decoded from `frames` source frames and
    /// returns the newly committed tokens. On the final chunk the policy
    /// must commit the remainder of the hypothesis.
    fn step(&mut self, hyp: &Hypothesis, frames: usize, is_final: bool) -> Result<Vec<Token>>;

    fn committed(&self) -> &[Token];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PolicyConfig {
    La(LaConfig),
    #[serde(rename = "alignatt")]
    AlignAtt(AlignAttConfig),
}

impl PolicyConfig {
    pub fn chunk_ms(&self) -> f64 {
        match self {
            PolicyConfig::La(c) => c.chunk_ms,
            PolicyConfig::AlignAtt(c) => c.chunk_ms,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyConfig::La(_) => "la",
            PolicyConfig::AlignAtt(_) => "alignatt",
        }
    }

    /// `n` for Local Agreement, `f` for AlignAtt.
    pub fn param(&self) -> u32 {
        match self {
            PolicyConfig::La(c) => c.n as u32,
            PolicyConfig::AlignAtt(c) => c.f as u32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PolicyConfig::La(c) => c.validate(),
            PolicyConfig::AlignAtt(c) => c.validate(),
        }
    }

    pub fn start(&self) -> Box<dyn Policy + Send> {
        match self {
            PolicyConfig::La(c) => Box::new(LaState::new(c.clone())),
            PolicyConfig::AlignAtt(c) => Box::new(AlignAttState::new(c.clone())),
        }
    }

    pub fn aggregation(&self) -> crate::agents::AttentionAggregation {
        match self {
            PolicyConfig::La(_) => crate::agents::AttentionAggregation::Given,
            PolicyConfig::AlignAtt(c) => c.attention_aggregation,
        }
    }
}
