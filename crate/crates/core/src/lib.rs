//! Simultaneous translation policies and latency evaluation.
//!
//! A session streams source frames chunk by chunk to an incremental agent;
//! a policy (Local Agreement or AlignAtt) decides which hypothesis tokens to
//! commit, and every commit is stamped with an ideal and a
//! computation-aware delay. The resulting [`EmissionLog`]s feed the latency
//! metrics, BLEU, and the speech-to-speech cascade simulation.

pub mod agents;
pub mod cascade;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod simulator;
pub mod timeline;

pub use error::{Error, Result};
pub use timeline::{CommitEvent, DelayMode, EmissionLog, Hypothesis, SourceStream, Token};
