//! Session driver: delivers the source chunk by chunk, queries the agent,
//! lets the policy commit, and stamps every commit with both clocks.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{checked_hypothesis, Agent, AgentRequest, EOS};
use crate::corpus::Session;
use crate::error::{Error, Result};
use crate::metrics::{compute_delay_metrics, corpus_bleu_with, AtdConfig, BleuConfig};
use crate::policy::{AlignAttConfig, LaConfig, PolicyConfig};
use crate::timeline::{DelayMode, EmissionLog, SourceStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Ideal,
    ComputationAware,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// Agent-reported `compute_ms`, else wall time around the request.
    #[default]
    Measured,
    FixedPerDecode(f64),
    /// Cost proportional to the number of frames decoded.
    PerFrame(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClockModel {
    pub mode: ClockMode,
    pub cost_model: CostModel,
}

impl ClockModel {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn computation_aware(cost_model: CostModel) -> Self {
        Self {
            mode: ClockMode::ComputationAware,
            cost_model,
        }
    }
}

/// Milliseconds charged for one decode call over `frames` frames.
pub fn apply_cost(clock: &ClockModel, frames: usize, measured_ms: f64) -> f64 {
    match (clock.mode, clock.cost_model) {
        (ClockMode::Ideal, _) => 0.0,
        (ClockMode::ComputationAware, CostModel::Measured) => measured_ms,
        (ClockMode::ComputationAware, CostModel::FixedPerDecode(ms)) => ms,
        (ClockMode::ComputationAware, CostModel::PerFrame(ms)) => ms * frames as f64,
    }
}

/// Runs one streaming session.
///
/// At each chunk boundary `t` the agent decodes from the frames received so
/// far, constrained to the committed prefix. Commits carry `d = t` and
/// `c = t + (compute charged so far)`; compute time accumulates across decode
/// calls. The last boundary is always `T`, where the policy commits the rest.
pub fn run_session(
    source: &SourceStream,
    agent: &mut dyn Agent,
    policy: &PolicyConfig,
    clock: &ClockModel,
) -> Result<EmissionLog> {
    policy.validate()?;
    let beam = match policy {
        PolicyConfig::La(c) => c.beam,
        PolicyConfig::AlignAtt(c) => c.beam,
    };
    agent.reset()?;
    let mut state = policy.start();
    let total = source.total_duration_ms();
    let mut log = EmissionLog::new(total).with_reference(source.reference_tokens.clone());
    let boundaries = source.chunk_boundaries(policy.chunk_ms());
    let mut charged = 0.0;
    for (k, &t) in boundaries.iter().enumerate() {
        let is_final = k + 1 == boundaries.len();
        let frames = if is_final {
            source.frame_count()
        } else {
            source.frames_available(t)
        };
        let request = AgentRequest::decode(frames, state.committed(), beam);
        let started = Instant::now();
        let response = agent.call(&request)?;
        let measured = response
            .compute_ms
            .unwrap_or_else(|| started.elapsed().as_secs_f64() * 1000.0);
        charged += apply_cost(clock, frames, measured);

        let mut hyp = checked_hypothesis(response, frames, state.committed(), policy.aggregation())?;
        hyp.truncate_at(EOS);
        let newly = state.step(&hyp, frames, is_final)?;
        if !newly.is_empty() {
            let wall = match clock.mode {
                ClockMode::Ideal => t,
                ClockMode::ComputationAware => t + charged,
            };
            log.record_commit(newly, t, wall)?;
        }
    }
    log.finalize(total)?;
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    La,
    #[serde(rename = "alignatt")]
    AlignAtt,
}

impl PolicyKind {
    pub fn config(self, chunk_ms: f64, param: u32, beam: u32) -> PolicyConfig {
        match self {
            PolicyKind::La => PolicyConfig::La(LaConfig {
                beam,
                ..LaConfig::new(param as usize, chunk_ms)
            }),
            PolicyKind::AlignAtt => PolicyConfig::AlignAtt(AlignAttConfig {
                beam,
                ..AlignAttConfig::new(param as usize, chunk_ms)
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub chunk_ms: f64,
    /// `n` for LA, `f` for AlignAtt.
    pub param: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub policy: PolicyKind,
    pub grid: Vec<GridPoint>,
    pub clock: ClockModel,
    pub beam: u32,
    pub bleu: BleuConfig,
    pub atd: AtdConfig,
}

impl SweepConfig {
    pub fn new(policy: PolicyKind, grid: Vec<GridPoint>, clock: ClockModel) -> Self {
        Self {
            policy,
            grid,
            clock,
            beam: crate::agents::DEFAULT_BEAM,
            bleu: BleuConfig::default(),
            atd: AtdConfig::default(),
        }
    }

    /// Cartesian product of chunk sizes and policy parameters.
    pub fn grid_from(chunks: &[f64], params: &[u32]) -> Vec<GridPoint> {
        chunks
            .iter()
            .flat_map(|&chunk_ms| params.iter().map(move |&param| GridPoint { chunk_ms, param }))
            .collect()
    }
}

/// One sweep configuration with its corpus-level quality and latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub policy: String,
    pub chunk_ms: Option<f64>,
    pub param: Option<u32>,
    pub bleu: Option<f64>,
    #[serde(rename = "AL")]
    pub al: Option<f64>,
    #[serde(rename = "LAAL")]
    pub laal: Option<f64>,
    #[serde(rename = "AP")]
    pub ap: Option<f64>,
    #[serde(rename = "DAL")]
    pub dal: Option<f64>,
    #[serde(rename = "ATD")]
    pub atd: Option<f64>,
    #[serde(rename = "AL_CA")]
    pub al_ca: Option<f64>,
    #[serde(rename = "LAAL_CA")]
    pub laal_ca: Option<f64>,
    #[serde(rename = "AP_CA")]
    pub ap_ca: Option<f64>,
    #[serde(rename = "DAL_CA")]
    pub dal_ca: Option<f64>,
    #[serde(rename = "ATD_CA")]
    pub atd_ca: Option<f64>,
    #[serde(rename = "Start_Offset")]
    pub start_offset: Option<f64>,
    #[serde(rename = "End_Offset")]
    pub end_offset: Option<f64>,
}

impl TradeoffRow {
    pub fn empty(policy: impl Into<String>) -> Self {
        Self {
            policy: policy.into(),
            chunk_ms: None,
            param: None,
            bleu: None,
            al: None,
            laal: None,
            ap: None,
            dal: None,
            atd: None,
            al_ca: None,
            laal_ca: None,
            ap_ca: None,
            dal_ca: None,
            atd_ca: None,
            start_offset: None,
            end_offset: None,
        }
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Which delay columns a summary fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modes {
    pub ideal: bool,
    pub computation_aware: bool,
}

impl Modes {
    pub const IDEAL: Modes = Modes {
        ideal: true,
        computation_aware: false,
    };
    pub const CA: Modes = Modes {
        ideal: false,
        computation_aware: true,
    };
    pub const BOTH: Modes = Modes {
        ideal: true,
        computation_aware: true,
    };
}

/// Corpus-level row: BLEU over all sessions that have references, latency
/// averaged over sessions that emitted at least one token.
pub fn summarize_logs(
    mut row: TradeoffRow,
    logs: &[EmissionLog],
    modes: Modes,
    bleu: &BleuConfig,
    atd: &AtdConfig,
) -> Result<TradeoffRow> {
    let scored: Vec<_> = logs.iter().filter(|l| l.reference_tokens.is_some()).collect();
    if !scored.is_empty() {
        let hyps: Vec<_> = scored.iter().map(|l| l.output_tokens()).collect();
        let refs: Vec<_> = scored
            .iter()
            .map(|l| l.reference_tokens.clone().unwrap_or_default())
            .collect();
        row.bleu = Some(corpus_bleu_with(&hyps, &refs, bleu)?.score);
    }
    let nonempty: Vec<_> = logs.iter().filter(|l| l.token_count() > 0).collect();
    let all_have_refs = nonempty.iter().all(|l| l.reference_tokens.is_some());
    let collect = |mode| -> Result<Vec<_>> { nonempty.iter().map(|l| compute_delay_metrics(l, mode, atd)).collect() };
    if modes.ideal {
        let m = collect(DelayMode::Ideal)?;
        row.al = mean(m.iter().map(|x| x.al));
        row.laal = if all_have_refs {
            mean(m.iter().filter_map(|x| x.laal))
        } else {
            None
        };
        row.ap = mean(m.iter().map(|x| x.ap));
        row.dal = mean(m.iter().map(|x| x.dal));
        row.atd = mean(m.iter().map(|x| x.atd));
        row.start_offset = mean(m.iter().map(|x| x.start_offset));
        row.end_offset = mean(m.iter().map(|x| x.end_offset));
    }
    if modes.computation_aware {
        let m = collect(DelayMode::ComputationAware)?;
        row.al_ca = mean(m.iter().map(|x| x.al));
        row.laal_ca = if all_have_refs {
            mean(m.iter().filter_map(|x| x.laal))
        } else {
            None
        };
        row.ap_ca = mean(m.iter().map(|x| x.ap));
        row.dal_ca = mean(m.iter().map(|x| x.dal));
        row.atd_ca = mean(m.iter().map(|x| x.atd));
        if !modes.ideal {
            row.start_offset = mean(m.iter().map(|x| x.start_offset));
            row.end_offset = mean(m.iter().map(|x| x.end_offset));
        }
    }
    Ok(row)
}

pub type AgentFactory<'a> = dyn Fn(&Session) -> Result<Box<dyn Agent>> + Sync + 'a;

/// Runs every session of the corpus at one grid point.
pub fn run_grid_point(
    cfg: &SweepConfig,
    point: GridPoint,
    sessions: &[Session],
    agent_factory: &AgentFactory<'_>,
) -> Result<Vec<EmissionLog>> {
    let policy = cfg.policy.config(point.chunk_ms, point.param, cfg.beam);
    let run = |s: &Session| -> Result<EmissionLog> {
        let mut agent = agent_factory(s)?;
        run_session(&s.source, agent.as_mut(), &policy, &cfg.clock)
    };
    // Measured costs would be distorted by concurrent sessions.
    if cfg.clock.cost_model == CostModel::Measured && cfg.clock.mode == ClockMode::ComputationAware {
        sessions.iter().map(run).collect()
    } else {
        sessions.par_iter().map(run).collect()
    }
}

/// One [`TradeoffRow`] per grid point, in grid order. The `_CA` columns are
/// filled only under the computation-aware clock.
pub fn run_sweep(
    cfg: &SweepConfig,
    sessions: &[Session],
    agent_factory: &AgentFactory<'_>,
) -> Result<Vec<TradeoffRow>> {
    if cfg.grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    cfg.grid
        .iter()
        .map(|&point| {
            let logs = run_grid_point(cfg, point, sessions, agent_factory)?;
            let mut row = TradeoffRow::empty(match cfg.policy {
                PolicyKind::La => "la",
                PolicyKind::AlignAtt => "alignatt",
            });
            row.chunk_ms = Some(point.chunk_ms);
            row.param = Some(point.param);
            let modes = match cfg.clock.mode {
                ClockMode::Ideal => Modes::IDEAL,
                ClockMode::ComputationAware => Modes::BOTH,
            };
            summarize_logs(row, &logs, modes, &cfg.bleu, &cfg.atd)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ToyAgent, ToyTransducerSpec};

    fn toy_source(total_ms: f64, frames: usize) -> SourceStream {
        SourceStream::with_frame_count(total_ms, frames).unwrap()
    }

    #[test]
    fn cost_models() {
        let ideal = ClockModel::ideal();
        assert_eq!(apply_cost(&ideal, 400, 12.0), 0.0);
        let fixed = ClockModel::computation_aware(CostModel::FixedPerDecode(50.0));
        assert_eq!(apply_cost(&fixed, 400, 12.0), 50.0);
        let per_frame = ClockModel::computation_aware(CostModel::PerFrame(0.5));
        assert_eq!(apply_cost(&per_frame, 400, 12.0), 200.0);
        let measured = ClockModel::computation_aware(CostModel::Measured);
        assert_eq!(apply_cost(&measured, 400, 12.0), 12.0);
    }

    #[test]
    fn ideal_clock_has_equal_delays() {
        let spec = ToyTransducerSpec::from_ends(30, &[3, 7, 12, 20, 26, 29]);
        let mut agent = ToyAgent::new(spec).unwrap();
        let log = run_session(
            &toy_source(3000.0, 30),
            &mut agent,
            &PolicyConfig::La(LaConfig::new(2, 500.0)),
            &ClockModel::ideal(),
        )
        .unwrap();
        for c in log.commits() {
            assert_eq!(c.ideal_delay_ms, c.wall_delay_ms);
        }
    }

    #[test]
    fn fixed_cost_accumulates_per_decode() {
        // LA-1 over 3 chunks of 1000 ms; one token becomes available per chunk.
        let spec = ToyTransducerSpec::from_ends(30, &[5, 15, 25]);
        let mut agent = ToyAgent::new(spec).unwrap();
        let clock = ClockModel::computation_aware(CostModel::FixedPerDecode(50.0));
        let log = run_session(
            &toy_source(3000.0, 30),
            &mut agent,
            &PolicyConfig::La(LaConfig::new(1, 1000.0)),
            &clock,
        )
        .unwrap();
        let walls: Vec<_> = log.commits().iter().map(|c| c.wall_delay_ms).collect();
        assert_eq!(walls, vec![1050.0, 2100.0, 3150.0]);
        assert_eq!(agent.decode_calls, 3);
    }

    #[test]
    fn measured_cost_lower_bound() {
        let spec = ToyTransducerSpec::from_ends(20, &[4, 9, 14, 19]);
        let mut agent = ToyAgent::new(spec).unwrap();
        agent.sleep = Some(std::time::Duration::from_millis(10));
        let clock = ClockModel::computation_aware(CostModel::Measured);
        let log = run_session(
            &toy_source(2000.0, 20),
            &mut agent,
            &PolicyConfig::La(LaConfig::new(1, 500.0)),
            &clock,
        )
        .unwrap();
        let calls_at = |d: f64| (d / 500.0).ceil();
        for c in log.commits() {
            assert!(c.wall_delay_ms - c.ideal_delay_ms >= 10.0 * calls_at(c.ideal_delay_ms));
        }
    }

    #[test]
    fn sweep_row_count() {
        let sessions: Vec<Session> = (0..3)
            .map(|i| {
                let spec = ToyTransducerSpec::from_ends(20, &[4, 9, 14, 19]).with_instability(2, i);
                Session::toy(format!("s{i}"), 2000.0, spec).unwrap()
            })
            .collect();
        let cfg = SweepConfig::new(
            PolicyKind::La,
            SweepConfig::grid_from(&[200.0, 1000.0], &[2]),
            ClockModel::computation_aware(CostModel::FixedPerDecode(50.0)),
        );
        let rows = run_sweep(&cfg, &sessions, &|s: &Session| s.make_agent()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].chunk_ms, Some(200.0));
        assert!(rows.iter().all(|r| r.bleu.is_some() && r.al_ca >= r.al));
    }
}
