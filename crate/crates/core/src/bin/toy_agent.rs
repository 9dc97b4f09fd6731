//! Wire-protocol server around the in-process toy agents.
//!
//! `decode` is answered by the toy transducer loaded from `--spec`,
//! `dual_decode` by the toy romanizer.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use simulst::agents::{Agent, AgentRequest, RequestKind, ToyAgent, ToyRomanizer, ToyTransducerSpec};

#[derive(Parser)]
#[command(
    name = "simulst-toy-agent",
    about = "Toy agent speaking the line-delimited JSON protocol"
)]
struct Args {
    /// Toy transducer spec (JSON). Without it only dual_decode is served.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Value reported as `compute_ms` on every decode.
    #[arg(long)]
    compute_ms: Option<f64>,
}

fn load_spec(path: &PathBuf) -> Result<ToyTransducerSpec, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut toy = match args.spec.as_ref().map(load_spec).transpose() {
        Ok(spec) => match spec.map(ToyAgent::new).transpose() {
            Ok(agent) => agent,
            Err(e) => {
                eprintln!("simulst-toy-agent: {e}");
                return ExitCode::from(1);
            }
        },
        Err(e) => {
            eprintln!("simulst-toy-agent: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(agent) = toy.as_mut() {
        agent.reported_compute_ms = args.compute_ms;
    }
    let mut romanizer = ToyRomanizer::default();

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut send = |line: String| -> io::Result<()> {
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()
    };
    if send(json!({"proto": 1}).to_string()).is_err() {
        return ExitCode::from(1);
    }
    for line in io::stdin().lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let request: AgentRequest = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                if send(json!({"error": format!("malformed request: {e}")}).to_string()).is_err() {
                    break;
                }
                continue;
            }
        };
        let result = match request.kind {
            RequestKind::Decode => match toy.as_mut() {
                Some(agent) => agent.call(&request),
                None => Err(simulst::Error::ProtocolError("no toy spec loaded".into())),
            },
            RequestKind::DualDecode => romanizer.call(&request),
            RequestKind::Reset | RequestKind::Close => Ok(Default::default()),
        };
        let reply = match result {
            Ok(resp) => serde_json::to_string(&resp).unwrap_or_else(|e| json!({"error": e.to_string()}).to_string()),
            Err(e) => json!({"error": e.to_string()}).to_string(),
        };
        if send(reply).is_err() || request.kind == RequestKind::Close {
            break;
        }
    }
    ExitCode::SUCCESS
}
