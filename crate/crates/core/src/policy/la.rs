//! Local Agreement (LA-n): commit the longest common prefix of the `n` most
//! recent chunk-level hypotheses.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::Policy;
use crate::agents::Agent;
use crate::error::{Error, Result};
use crate::simulator::{run_session, ClockModel};
use crate::timeline::{lcp_all, EmissionLog, Hypothesis, SourceStream, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaConfig {
    pub n: usize,
    pub chunk_ms: f64,
    #[serde(default = "default_beam")]
    pub beam: u32,
}

fn default_beam() -> u32 {
    crate::agents::DEFAULT_BEAM
}

impl Default for LaConfig {
    fn default() -> Self {
        Self {
            n: 2,
            chunk_ms: 1000.0,
            beam: default_beam(),
        }
    }
}

impl LaConfig {
    pub fn new(n: usize, chunk_ms: f64) -> Self {
        Self {
            n,
            chunk_ms,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("LA agreement window n must be >= 1".into()));
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

#[derive(Debug, Clone)]
pub struct LaState {
    cfg: LaConfig,
    recent: VecDeque<Vec<Token>>,
    committed: Vec<Token>,
}

impl LaState {
    pub fn new(cfg: LaConfig) -> Self {
        Self {
            recent: VecDeque::with_capacity(cfg.n),
            cfg,
            committed: Vec::new(),
        }
    }

    /// State with a pre-existing commitment and hypothesis history.
    pub fn with_history(cfg: LaConfig, committed: Vec<Token>, history: Vec<Vec<Token>>) -> Self {
        let mut recent: VecDeque<_> = history.into();
        while recent.len() > cfg.n {
            recent.pop_front();
        }
        Self { cfg, recent, committed }
    }

    pub fn recent_hypotheses(&self) -> impl Iterator<Item = &[Token]> {
        self.recent.iter().map(Vec::as_slice)
    }
}

fn check_prefix(committed: &[Token], hyp: &[Token]) -> Result<()> {
    match committed.iter().zip(hyp).position(|(c, h)| c != h) {
        Some(position) => Err(Error::PrefixConflict { position }),
        None if hyp.len() < committed.len() => Err(Error::PrefixConflict { position: hyp.len() }),
        None => Ok(()),
    }
}

/// Pushes `new_hypothesis` and returns the tokens that become committed.
/// Nothing is committed until `n` hypotheses have been seen.
pub fn la_commit_step(state: &mut LaState, new_hypothesis: &[Token]) -> Result<Vec<Token>> {
    check_prefix(&state.committed, new_hypothesis)?;
    if state.recent.len() == state.cfg.n {
        state.recent.pop_front();
    }
    state.recent.push_back(new_hypothesis.to_vec());
    if state.recent.len() < state.cfg.n {
        return Ok(Vec::new());
    }
    let agreed = lcp_all(state.recent.iter().map(Vec::as_slice));
    let newly = agreed
        .get(state.committed.len()..)
        .map(<[Token]>::to_vec)
        .unwrap_or_default();
    state.committed.extend(newly.iter().cloned());
    Ok(newly)
}

impl Policy for LaState {
    fn step(&mut self, hyp: &Hypothesis, _frames: usize, is_final: bool) -> Result<Vec<Token>> {
        if is_final {
            check_prefix(&self.committed, &hyp.tokens)?;
            let rest = hyp.tokens[self.committed.len()..].to_vec();
            self.committed.extend(rest.iter().cloned());
            self.recent.clear();
            return Ok(rest);
        }
        la_commit_step(self, &hyp.tokens)
    }

    fn committed(&self) -> &[Token] {
        &self.committed
    }
}

/// Runs one LA-n session.
pub fn run_la(source: &SourceStream, agent: &mut dyn Agent, cfg: &LaConfig, clock: &ClockModel) -> Result<EmissionLog> {
    run_session(source, agent, &super::PolicyConfig::La(cfg.clone()), clock)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Token> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn la2_commits_agreeing_prefix() {
        let cfg = LaConfig::new(2, 500.0);
        let mut st = LaState::new(cfg);
        assert!(la_commit_step(&mut st, &toks("A B C")).unwrap().is_empty());
        assert_eq!(la_commit_step(&mut st, &toks("A B D")).unwrap(), toks("A B"));
        assert_eq!(st.committed(), toks("A B").as_slice());
    }

    #[test]
    fn la1_commits_everything() {
        let mut st = LaState::new(LaConfig::new(1, 500.0));
        assert_eq!(la_commit_step(&mut st, &toks("A B C")).unwrap(), toks("A B C"));
    }

    #[test]
    fn la2_extends_existing_commitment() {
        let cfg = LaConfig::new(2, 500.0);
        let mut st = LaState::with_history(cfg, toks("A B"), vec![toks("A B D")]);
        assert_eq!(la_commit_step(&mut st, &toks("A B D E")).unwrap(), toks("D"));
        assert_eq!(st.committed(), toks("A B D").as_slice());
    }

    #[test]
    fn rejects_hypothesis_dropping_commitment() {
        let cfg = LaConfig::new(2, 500.0);
        let mut st = LaState::with_history(cfg, toks("A B"), vec![toks("A B")]);
        assert!(matches!(
            la_commit_step(&mut st, &toks("A C")),
            Err(Error::PrefixConflict { position: 1 })
        ));
    }

    #[test]
    fn final_step_commits_rest() {
        let mut st = LaState::new(LaConfig::new(3, 500.0));
        let hyp = Hypothesis::new(toks("A B"));
        assert!(st.step(&hyp, 5, false).unwrap().is_empty());
        assert_eq!(
            st.step(&Hypothesis::new(toks("A B C")), 10, true).unwrap(),
            toks("A B C")
        );
    }
}
