//! Corpus manifests, the samples-per-token ratio filter, and trade-off CSV
//! export.
//!
//! Manifest format: one entry per line, six tab-separated fields
//!
//! ```text
//! id  duration_ms  sample_count  sample_rate  reference  agent_binding
//! ```
//!
//! `reference` is space-separated tokens. `agent_binding` is `-` (none),
//! `toy:<json>` (inline toy transducer), `toy@<path>` (toy transducer JSON
//! file, relative to the manifest) or `cmd:<shell command>` (external agent).
//! Inside fields, `\t`, `\n` and `\\` stand for tab, newline and backslash.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, ExternalAgent, ToyAgent, ToySpan, ToyTransducerSpec, DEFAULT_TIMEOUT};
use crate::error::{Error, Result};
use crate::simulator::TradeoffRow;
use crate::timeline::{SourceStream, Token};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub enum AgentBinding {
    None,
    Toy(ToyTransducerSpec),
    ToyFile(PathBuf),
    Command(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub source_duration_ms: f64,
    pub source_sample_count: u64,
    pub sample_rate: u32,
    pub reference: Vec<Token>,
    pub binding: AgentBinding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Maximum input samples per output token.
    pub max_ratio: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { max_ratio: 4000.0 }
    }
}

/// Keep the entry iff `samples / tokens <= max_ratio`.
pub fn ratio_filter(entry: &ManifestEntry, cfg: &FilterConfig) -> Result<bool> {
    keep_ratio(entry.source_sample_count, entry.reference.len(), cfg)
}

pub fn keep_ratio(samples: u64, tokens: usize, cfg: &FilterConfig) -> Result<bool> {
    if tokens == 0 {
        return Err(Error::ZeroTokens);
    }
    Ok(samples as f64 / tokens as f64 <= cfg.max_ratio)
}

fn unescape(field: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

fn parse_binding(raw: &str) -> std::result::Result<AgentBinding, String> {
    if raw == "-" || raw.is_empty() {
        Ok(AgentBinding::None)
    } else if let Some(json) = raw.strip_prefix("toy:") {
        let spec: ToyTransducerSpec = serde_json::from_str(json).map_err(|e| format!("bad toy spec: {e}"))?;
        spec.validate().map_err(|e| e.to_string())?;
        Ok(AgentBinding::Toy(spec))
    } else if let Some(path) = raw.strip_prefix("toy@") {
        Ok(AgentBinding::ToyFile(PathBuf::from(path)))
    } else if let Some(cmd) = raw.strip_prefix("cmd:") {
        Ok(AgentBinding::Command(cmd.to_string()))
    } else {
        Err(format!("unknown agent binding {raw:?}"))
    }
}

fn format_binding(binding: &AgentBinding) -> Result<String> {
    Ok(match binding {
        AgentBinding::None => "-".to_string(),
        AgentBinding::Toy(spec) => format!("toy:{}", serde_json::to_string(spec)?),
        AgentBinding::ToyFile(p) => format!("toy@{}", p.display()),
        AgentBinding::Command(c) => format!("cmd:{c}"),
    })
}

pub fn parse_manifest(text: &str, path: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |message: String| Error::ParseError {
            path: path.to_string(),
            line: lineno,
            message,
        };
        let fields: Vec<String> = line
            .split('\t')
            .map(unescape)
            .collect::<std::result::Result<_, _>>()
            .map_err(perr)?;
        if fields.len() != 6 {
            return Err(perr(format!("expected 6 tab-separated fields, found {}", fields.len())));
        }
        let id = fields[0].clone();
        if id.is_empty() {
            return Err(perr("empty id".into()));
        }
        let duration: f64 = fields[1]
            .parse()
            .map_err(|_| perr(format!("bad duration_ms {:?}", fields[1])))?;
        if !(duration >= 0.0) || !duration.is_finite() {
            return Err(perr(format!("bad duration_ms {duration}")));
        }
        let samples: u64 = fields[2]
            .parse()
            .map_err(|_| perr(format!("bad sample_count {:?}", fields[2])))?;
        let rate: u32 = fields[3]
            .parse()
            .map_err(|_| perr(format!("bad sample_rate {:?}", fields[3])))?;
        if rate == 0 {
            return Err(perr("sample_rate must be positive".into()));
        }
        let expected = duration * rate as f64 / 1000.0;
        if (expected - samples as f64).abs() > 1.0 {
            return Err(perr(format!(
                "sample_count {samples} inconsistent with {duration} ms at {rate} Hz"
            )));
        }
        let reference = fields[4]
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        let binding = parse_binding(&fields[5]).map_err(perr)?;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        entries.push(ManifestEntry {
            id,
            source_duration_ms: duration,
            source_sample_count: samples,
            sample_rate: rate,
            reference,
            binding,
        });
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, &path.display().to_string())
}

pub fn format_manifest(entries: &[ManifestEntry]) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        let fields = [
            escape(&e.id),
            e.source_duration_ms.to_string(),
            e.source_sample_count.to_string(),
            e.sample_rate.to_string(),
            escape(&e.reference.join(" ")),
            escape(&format_binding(&e.binding)?),
        ];
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    Ok(out)
}

pub fn save_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    fs::write(path, format_manifest(entries)?).map_err(|e| Error::io(path, e))
}

/// How a session obtains its agent.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionAgent {
    Toy(ToyTransducerSpec),
    Command { command: String, timeout: Duration },
}

/// A manifest entry resolved into something the simulator can run.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub source: SourceStream,
    pub agent: SessionAgent,
}

impl Session {
    /// Toy session whose frames evenly divide `duration_ms`.
    pub fn toy(id: impl Into<String>, duration_ms: f64, spec: ToyTransducerSpec) -> Result<Self> {
        spec.validate()?;
        let source =
            SourceStream::with_frame_count(duration_ms, spec.source_frames)?.with_reference(spec.offline_tokens());
        Ok(Self {
            id: id.into(),
            source,
            agent: SessionAgent::Toy(spec),
        })
    }

    pub fn make_agent(&self) -> Result<Box<dyn Agent>> {
        Ok(match &self.agent {
            SessionAgent::Toy(spec) => Box::new(ToyAgent::new(spec.clone())?),
            SessionAgent::Command { command, timeout } => Box::new(ExternalAgent::spawn(command, *timeout)?),
        })
    }
}

/// Options for turning manifest entries into sessions.
#[derive(Debug, Clone)]
pub struct SessionOptions {
    /// Frame length for external agents.
    pub frame_ms: f64,
    /// Overrides every entry's binding with this external agent.
    pub agent_cmd: Option<String>,
    pub timeout: Duration,
    pub base_dir: PathBuf,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            frame_ms: 160.0,
            agent_cmd: None,
            timeout: DEFAULT_TIMEOUT,
            base_dir: PathBuf::from("."),
        }
    }
}

impl ManifestEntry {
    pub fn to_session(&self, opts: &SessionOptions) -> Result<Session> {
        let agent = match (&opts.agent_cmd, &self.binding) {
            (Some(cmd), _) | (None, AgentBinding::Command(cmd)) => SessionAgent::Command {
                command: cmd.clone(),
                timeout: opts.timeout,
            },
            (None, AgentBinding::Toy(spec)) => SessionAgent::Toy(spec.clone()),
            (None, AgentBinding::ToyFile(p)) => {
                let path = opts.base_dir.join(p);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                SessionAgent::Toy(serde_json::from_str(&text)?)
            }
            (None, AgentBinding::None) => {
                return Err(Error::Config(format!(
                    "entry {:?} has no agent binding; pass --agent-cmd",
                    self.id
                )))
            }
        };
        let source = match &agent {
            SessionAgent::Toy(spec) => {
                spec.validate()?;
                SourceStream::with_frame_count(self.source_duration_ms, spec.source_frames)?
            }
            SessionAgent::Command { .. } => SourceStream::uniform(self.source_duration_ms, opts.frame_ms)?,
        };
        Ok(Session {
            id: self.id.clone(),
            source: source.with_reference(self.reference.clone()),
            agent,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusConfig {
    pub sessions: usize,
    pub frame_ms: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Frames consumed per target token.
    pub min_span: usize,
    pub max_span: usize,
    pub instability: usize,
    pub vocab: usize,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            sessions: 20,
            frame_ms: 40.0,
            min_tokens: 8,
            max_tokens: 20,
            min_span: 3,
            max_span: 10,
            instability: 0,
            vocab: 400,
        }
    }
}

/// Deterministic synthetic corpus of toy-transducer sessions.
pub fn toy_corpus(seed: u64, cfg: &ToyCorpusConfig) -> Vec<ManifestEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.sessions)
        .map(|i| {
            let n = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
            let mut end = 0;
            let entries: Vec<ToySpan> = (0..n)
                .map(|_| {
                    let start = end + 1;
                    end += rng.random_range(cfg.min_span..=cfg.max_span);
                    ToySpan {
                        start,
                        end,
                        token: format!("w{}", rng.random_range(0..cfg.vocab)),
                    }
                })
                .collect();
            let source_frames = end + rng.random_range(0..=5usize);
            let spec = ToyTransducerSpec {
                source_frames,
                entries,
                instability: cfg.instability,
                seed: seed.wrapping_mul(1000).wrapping_add(i as u64),
            };
            let duration = source_frames as f64 * cfg.frame_ms;
            ManifestEntry {
                id: format!("toy-{i:04}"),
                source_duration_ms: duration,
                source_sample_count: (duration * DEFAULT_SAMPLE_RATE as f64 / 1000.0).round() as u64,
                sample_rate: DEFAULT_SAMPLE_RATE,
                reference: spec.offline_tokens(),
                binding: AgentBinding::Toy(spec),
            }
        })
        .collect()
}

pub const TRADEOFF_HEADER: &str =
    "policy,chunk_ms,param,bleu,AL,LAAL,AP,DAL,ATD,AL_CA,LAAL_CA,AP_CA,DAL_CA,ATD_CA,Start_Offset,End_Offset";

pub fn write_tradeoff<W: Write>(out: W, rows: &[TradeoffRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn read_tradeoff<R: Read>(input: R) -> Result<Vec<TradeoffRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != TRADEOFF_HEADER {
        return Err(Error::Config(format!("unexpected trade-off header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn export_tradeoff(rows: &[TradeoffRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config("no trade-off rows to export".into()));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_tradeoff(file, rows)
}

pub fn import_tradeoff(path: &Path) -> Result<Vec<TradeoffRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tradeoff(file)
}
