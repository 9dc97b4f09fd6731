//! Command-line interface: `simulate`, `sweep`, `score`, `diagram`, `filter`.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 agent or protocol
//! failure.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::agents::{Agent, ExternalAgent, ToyRomanizer};
use crate::cascade::{
    handoff, render_timing_diagram, schedule_speech, ChannelSchedule, DurationModel, HandoffKind, HandoffPolicy,
    SpeechConfig,
};
use crate::corpus::{
    load_manifest, ratio_filter, save_manifest, toy_corpus, write_tradeoff, FilterConfig, Session, SessionOptions,
    ToyCorpusConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{AtdConfig, BleuConfig};
use crate::simulator::{
    run_grid_point, run_sweep, summarize_logs, ClockModel, CostModel, GridPoint, Modes, PolicyKind, SweepConfig,
    TradeoffRow,
};
use crate::timeline::{read_logs, write_logs, DelayMode, EmissionLog};

pub const AGENT_CMD_ENV: &str = "SIMULST_AGENT_CMD";

#[derive(Debug, Parser)]
#[command(
    name = "simulst",
    version,
    about = "Simultaneous translation policy simulator and latency evaluator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one policy configuration over a corpus and write emission logs.
    Simulate(SimulateArgs),
    /// Run a policy over a grid of chunk sizes and parameters; write a trade-off CSV.
    Sweep(SweepArgs),
    /// Compute quality and latency metrics from emission logs.
    Score(ScoreArgs),
    /// Render timing diagrams (source, text, speech lanes) from emission logs.
    Diagram(DiagramArgs),
    /// Drop manifest entries whose samples-per-token ratio exceeds a threshold.
    Filter(FilterArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    La,
    Alignatt,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::La => PolicyKind::La,
            PolicyArg::Alignatt => PolicyKind::AlignAtt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockArg {
    Ideal,
    Ca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ideal,
    Ca,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HandoffArg {
    Immediate,
    BoundaryGated,
    EstimatorGated,
}

impl From<HandoffArg> for HandoffKind {
    fn from(h: HandoffArg) -> Self {
        match h {
            HandoffArg::Immediate => HandoffKind::Immediate,
            HandoffArg::BoundaryGated => HandoffKind::BoundaryGated,
            HandoffArg::EstimatorGated => HandoffKind::EstimatorGated,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Session manifest (TSV). Without it a synthetic toy corpus is used.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// External agent command line; overrides manifest bindings.
    #[arg(long, env = AGENT_CMD_ENV)]
    pub agent_cmd: Option<String>,
    /// Frame length (ms) of the source stream seen by external agents.
    #[arg(long, default_value_t = 160.0)]
    pub frame_ms: f64,
    /// Per-request timeout for external agents.
    #[arg(long, default_value_t = 60_000)]
    pub timeout_ms: u64,
    /// Seed of the synthetic toy corpus.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sessions in the synthetic toy corpus.
    #[arg(long, default_value_t = 20)]
    pub toy_sessions: usize,
    /// Instability k (frames) of the synthetic toy corpus.
    #[arg(long, default_value_t = 30)]
    pub instability: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ClockArgs {
    #[arg(long, value_enum, default_value_t = ClockArg::Ideal)]
    pub clock: ClockArg,
    /// Compute cost under `--clock ca`: `measured`, `fixed:<ms>` per decode, or `per-frame:<ms>`.
    #[arg(long, default_value = "measured")]
    pub cost: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub policy: PolicyArg,
    /// Local Agreement history length.
    #[arg(long, default_value_t = 2)]
    pub n: u32,
    /// AlignAtt frame margin.
    #[arg(long, default_value_t = 1)]
    pub f: u32,
    /// Chunk size; defaults to 1000 for la and 800 for alignatt.
    #[arg(long)]
    pub chunk_ms: Option<f64>,
    #[arg(long, default_value_t = crate::agents::DEFAULT_BEAM)]
    pub beam: u32,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub clock: ClockArgs,
    /// Output emission log file (one JSON record per session).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub policy: PolicyArg,
    /// Chunk sizes: `a,b,c`, or `lo..hi:step` (inclusive).
    #[arg(long, default_value = "200..1000:200")]
    pub chunk_ms: String,
    /// Local Agreement n values: `1,2,3` or `1..3`.
    #[arg(long)]
    pub n: Option<String>,
    /// AlignAtt f values: `1..12` or a list.
    #[arg(long)]
    pub f: Option<String>,
    #[arg(long, default_value_t = crate::agents::DEFAULT_BEAM)]
    pub beam: u32,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub clock: ClockArgs,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SpeechArgs {
    /// Speech duration (ms) per word, or per CJK character bigram.
    #[arg(long, default_value_t = 300.0)]
    pub word_ms: f64,
    /// Synthesis time added to every TTS request.
    #[arg(long, default_value_t = 0.0)]
    pub tts_latency_ms: f64,
    /// Margin of the dual-track estimator for estimator-gated handoff.
    #[arg(long, default_value_t = 1)]
    pub estimator_f: usize,
    /// Dual-track agent command for estimator-gated handoff; the built-in
    /// romanizer is used if omitted.
    #[arg(long)]
    pub estimator_cmd: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub logs: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    /// Evaluate speech output: ATD and offsets come from the scheduled speech
    /// channel under this handoff policy.
    #[arg(long, value_enum)]
    pub speech: Option<HandoffArg>,
    #[command(flatten)]
    pub speech_args: SpeechArgs,
    #[arg(long, default_value_t = 300.0)]
    pub atd_segment_ms: f64,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagramArgs {
    #[arg(long)]
    pub logs: PathBuf,
    /// 0-based line index in the log file; all sessions if omitted.
    #[arg(long)]
    pub session: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ClockArg::Ideal)]
    pub mode: ClockArg,
    #[arg(long, value_enum, default_value_t = HandoffArg::Immediate)]
    pub handoff: HandoffArg,
    #[command(flatten)]
    pub speech_args: SpeechArgs,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 4000.0)]
    pub max_ratio: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `a,b,c` or an inclusive range `lo..hi[:step]`.
pub fn parse_f64_list(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse {spec:?}; expected `a,b,c` or `lo..hi:step`"));
    let values = if let Some((lo, rest)) = spec.split_once("..") {
        let (hi, step) = rest.split_once(':').unwrap_or((rest, "1"));
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        let step: f64 = step.trim().parse().map_err(|_| bad())?;
        if !(step > 0.0) || hi < lo {
            return Err(bad());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=count).map(|i| lo + i as f64 * step).collect()
    } else {
        spec.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(values)
}

pub fn parse_u32_list(spec: &str) -> Result<Vec<u32>> {
    let values = parse_f64_list(spec)?;
    if values
        .iter()
        .any(|v| v.fract() != 0.0 || *v < 0.0 || *v > u32::MAX as f64)
    {
        return Err(Error::Config(format!("{spec:?} must list non-negative integers")));
    }
    Ok(values.into_iter().map(|v| v as u32).collect())
}

pub fn parse_cost(spec: &str) -> Result<CostModel> {
    let bad = || Error::Config(format!("bad cost {spec:?}; use measured, fixed:<ms> or per-frame:<ms>"));
    let value = |v: &str| -> Result<f64> {
        let ms: f64 = v.parse().map_err(|_| bad())?;
        if ms >= 0.0 && ms.is_finite() {
            Ok(ms)
        } else {
            Err(bad())
        }
    };
    match spec.split_once(':') {
        None if spec == "measured" => Ok(CostModel::Measured),
        Some(("fixed", v)) => Ok(CostModel::FixedPerDecode(value(v)?)),
        Some(("per-frame", v)) => Ok(CostModel::PerFrame(value(v)?)),
        _ => Err(bad()),
    }
}

impl ClockArgs {
    pub fn model(&self) -> Result<ClockModel> {
        Ok(match self.clock {
            ClockArg::Ideal => ClockModel::ideal(),
            ClockArg::Ca => ClockModel::computation_aware(parse_cost(&self.cost)?),
        })
    }
}

impl CorpusArgs {
    pub fn sessions(&self) -> Result<Vec<Session>> {
        let opts = SessionOptions {
            frame_ms: self.frame_ms,
            agent_cmd: self.agent_cmd.clone().filter(|c| !c.trim().is_empty()),
            timeout: Duration::from_millis(self.timeout_ms),
            base_dir: self
                .manifest
                .as_deref()
                .and_then(Path::parent)
                .map(Path::to_path_buf)
                .unwrap_or_default(),
        };
        if !(opts.frame_ms > 0.0) {
            return Err(Error::Config("--frame-ms must be positive".into()));
        }
        let entries = match &self.manifest {
            Some(path) => load_manifest(path)?,
            None => {
                eprintln!("simulst: no manifest given; using toy corpus (seed {})", self.seed);
                toy_corpus(
                    self.seed,
                    &ToyCorpusConfig {
                        sessions: self.toy_sessions,
                        instability: self.instability,
                        ..Default::default()
                    },
                )
            }
        };
        if entries.is_empty() {
            return Err(Error::Config("corpus has no sessions".into()));
        }
        entries.iter().map(|e| e.to_session(&opts)).collect()
    }
}

impl SpeechArgs {
    fn config(&self) -> SpeechConfig {
        SpeechConfig {
            duration: DurationModel::Auto { ms: self.word_ms },
            tts_latency_ms: self.tts_latency_ms,
        }
    }

    fn estimator(&self, kind: HandoffKind) -> Result<Option<Box<dyn Agent>>> {
        if kind != HandoffKind::EstimatorGated {
            return Ok(None);
        }
        Ok(Some(match &self.estimator_cmd {
            Some(cmd) => Box::new(ExternalAgent::spawn(cmd, crate::agents::DEFAULT_TIMEOUT)?),
            None => Box::new(ToyRomanizer::default()),
        }))
    }

    fn schedule(
        &self,
        log: &EmissionLog,
        kind: HandoffKind,
        mode: DelayMode,
        agent: Option<&mut Box<dyn Agent>>,
    ) -> Result<ChannelSchedule> {
        let policy = HandoffPolicy {
            estimator_f: self.estimator_f,
            ..HandoffPolicy::new(kind)
        };
        let agent = agent.map(|a| a.as_mut() as &mut dyn Agent);
        let requests = handoff(log, &policy, mode, agent)?;
        schedule_speech(&requests, &self.config())
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| Error::io(path, e)),
        None => io::stdout().write_all(bytes).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn load_logs(path: &Path) -> Result<Vec<EmissionLog>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_logs(BufReader::new(file), &path.display().to_string())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let kind = PolicyKind::from(args.policy);
    let (param, default_chunk) = match kind {
        PolicyKind::La => (args.n, 1000.0),
        PolicyKind::AlignAtt => (args.f, 800.0),
    };
    let point = GridPoint {
        chunk_ms: args.chunk_ms.unwrap_or(default_chunk),
        param,
    };
    let mut cfg = SweepConfig::new(kind, vec![point], args.clock.model()?);
    cfg.beam = args.beam;
    cfg.policy.config(point.chunk_ms, point.param, cfg.beam).validate()?;
    let sessions = args.corpus.sessions()?;
    let logs = run_grid_point(&cfg, point, &sessions, &|s: &Session| s.make_agent())?;
    let mut buf = Vec::new();
    write_logs(&mut buf, &logs)?;
    write_output(Some(&args.out), &buf)?;
    eprintln!("simulst: wrote {} session logs to {}", logs.len(), args.out.display());
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let kind = PolicyKind::from(args.policy);
    let params = match kind {
        PolicyKind::La => parse_u32_list(args.n.as_deref().unwrap_or("2"))?,
        PolicyKind::AlignAtt => parse_u32_list(args.f.as_deref().unwrap_or("1"))?,
    };
    let chunks = parse_f64_list(&args.chunk_ms)?;
    let mut cfg = SweepConfig::new(kind, SweepConfig::grid_from(&chunks, &params), args.clock.model()?);
    cfg.beam = args.beam;
    for p in &cfg.grid {
        cfg.policy.config(p.chunk_ms, p.param, cfg.beam).validate()?;
    }
    let sessions = args.corpus.sessions()?;
    let rows = run_sweep(&cfg, &sessions, &|s: &Session| s.make_agent())?;
    let mut buf = Vec::new();
    write_tradeoff(&mut buf, &rows)?;
    write_output(args.out.as_deref(), &buf)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Replaces ATD and offsets with values measured on the speech channel.
fn apply_speech(
    row: &mut TradeoffRow,
    logs: &[&EmissionLog],
    modes: Modes,
    kind: HandoffKind,
    speech: &SpeechArgs,
    atd: &AtdConfig,
) -> Result<()> {
    let mut agent = speech.estimator(kind)?;
    let mut per_mode = |mode: DelayMode| -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
        let (mut atds, mut starts, mut ends) = (Vec::new(), Vec::new(), Vec::new());
        for log in logs.iter().filter(|l| l.token_count() > 0) {
            let schedule = speech.schedule(log, kind, mode, agent.as_mut())?;
            atds.push(schedule.atd(log.source_duration_ms, atd)?);
            let (s, e) = schedule.offsets(log.source_duration_ms)?;
            starts.push(s);
            ends.push(e);
        }
        Ok((mean(&atds), mean(&starts), mean(&ends)))
    };
    if modes.ideal {
        let (a, s, e) = per_mode(DelayMode::Ideal)?;
        row.atd = a;
        row.start_offset = s;
        row.end_offset = e;
    }
    if modes.computation_aware {
        let (a, s, e) = per_mode(DelayMode::ComputationAware)?;
        row.atd_ca = a;
        if !modes.ideal {
            row.start_offset = s;
            row.end_offset = e;
        }
    }
    Ok(())
}

fn score(args: &ScoreArgs) -> Result<()> {
    let logs = load_logs(&args.logs)?;
    let modes = match args.mode {
        ModeArg::Ideal => Modes::IDEAL,
        ModeArg::Ca => Modes::CA,
        ModeArg::Both => Modes::BOTH,
    };
    let atd = AtdConfig {
        segment_ms: args.atd_segment_ms,
    };
    atd.validate()?;
    let bleu = BleuConfig::default();
    let mut rows = Vec::with_capacity(logs.len() + 1);
    let groups = (0..logs.len())
        .map(|i| (format!("session:{i}"), vec![&logs[i]]))
        .chain(std::iter::once(("corpus".to_string(), logs.iter().collect())));
    for (label, group) in groups {
        let owned: Vec<EmissionLog> = group.iter().map(|l| (*l).clone()).collect();
        let mut row = summarize_logs(TradeoffRow::empty(label), &owned, modes, &bleu, &atd)?;
        if let Some(kind) = args.speech {
            apply_speech(&mut row, &group, modes, kind.into(), &args.speech_args, &atd)?;
        }
        rows.push(row);
    }
    let mut buf = Vec::new();
    write_tradeoff(&mut buf, &rows)?;
    write_output(args.out.as_deref(), &buf)
}

fn diagram(args: &DiagramArgs) -> Result<()> {
    let logs = load_logs(&args.logs)?;
    let indices: Vec<usize> = match args.session {
        Some(i) if i < logs.len() => vec![i],
        Some(i) => {
            return Err(Error::Config(format!(
                "--session {i} out of range; the log file has {} sessions",
                logs.len()
            )))
        }
        None => (0..logs.len()).collect(),
    };
    let mode = match args.mode {
        ClockArg::Ideal => DelayMode::Ideal,
        ClockArg::Ca => DelayMode::ComputationAware,
    };
    let kind = HandoffKind::from(args.handoff);
    let mut agent = args.speech_args.estimator(kind)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    for i in indices {
        let log = &logs[i];
        let schedule = args.speech_args.schedule(log, kind, mode, agent.as_mut())?;
        let d = render_timing_diagram(log, &schedule, mode);
        let json_path = args.out_dir.join(format!("session-{i}.json"));
        let txt_path = args.out_dir.join(format!("session-{i}.txt"));
        fs::write(&json_path, d.to_json()? + "\n").map_err(|e| Error::io(&json_path, e))?;
        fs::write(&txt_path, d.render_text()).map_err(|e| Error::io(&txt_path, e))?;
    }
    Ok(())
}

fn filter(args: &FilterArgs) -> Result<()> {
    if !(args.max_ratio > 0.0) || !args.max_ratio.is_finite() {
        return Err(Error::Config("--max-ratio must be positive".into()));
    }
    let cfg = FilterConfig {
        max_ratio: args.max_ratio,
    };
    let entries = load_manifest(&args.manifest)?;
    let mut kept = Vec::new();
    for e in &entries {
        let keep = ratio_filter(e, &cfg).map_err(|err| Error::Config(format!("entry {:?}: {err}", e.id)))?;
        if keep {
            kept.push(e.clone());
        }
    }
    save_manifest(&args.out, &kept)?;
    eprintln!("simulst: kept {} of {} entries", kept.len(), entries.len());
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Score(a) => score(a),
        Command::Diagram(a) => diagram(a),
        Command::Filter(a) => filter(a),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_agent_failure() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("simulst: error: {e}");
            if exit_code(&e) == 1 {
                eprintln!("simulst: fix the input above, or see `simulst help` for flags");
            }
            exit_code(&e)
        }
    }
}
