//! Client for agents running as a child process.
//!
//! Wire protocol: one compact JSON record per line over the child's
//! stdin/stdout. The child's first line must be `{"proto":1}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::Deserialize;

use super::{Agent, AgentRequest, AgentResponse, RequestKind};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Deserialize)]
struct Handshake {
    proto: u32,
}

#[derive(Deserialize)]
struct ErrorRecord {
    error: String,
}

pub struct ExternalAgent {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    closed: bool,
}

impl std::fmt::Debug for ExternalAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalAgent")
            .field("pid", &self.child.id())
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ExternalAgent {
    /// Runs `command` through `sh -c` and completes the handshake.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(command, e))?;
        let stdout = child.stdout.take().ok_or(Error::AgentCrashed)?;
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut agent = Self {
            child,
            stdin,
            lines: rx,
            timeout,
            closed: false,
        };
        let first = agent.read_line()?;
        match serde_json::from_str::<Handshake>(&first) {
            Ok(h) if h.proto == PROTOCOL_VERSION => Ok(agent),
            Ok(h) => Err(Error::ProtocolError(format!(
                "unsupported protocol version {}",
                h.proto
            ))),
            Err(_) => Err(Error::ProtocolError(format!(
                "expected handshake {{\"proto\":1}}, got {first:?}"
            ))),
        }
    }

    fn read_line(&mut self) -> Result<String> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::ProtocolError(format!("unreadable line: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::AgentCrashed),
        }
    }

    fn write_request(&mut self, request: &AgentRequest) -> Result<()> {
        let stdin = self.stdin.as_mut().ok_or(Error::AgentCrashed)?;
        let line = serde_json::to_string(request)?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
            .map_err(|_| Error::AgentCrashed)
    }

    fn roundtrip(&mut self, request: &AgentRequest) -> Result<AgentResponse> {
        self.write_request(request)?;
        let line = self.read_line()?;
        if let Ok(err) = serde_json::from_str::<ErrorRecord>(&line) {
            return Err(Error::ProtocolError(format!("agent reported: {}", err.error)));
        }
        let resp: AgentResponse = serde_json::from_str(&line)
            .map_err(|e| Error::ProtocolError(format!("malformed response {line:?}: {e}")))?;
        check_response(&resp)?;
        Ok(resp)
    }

    /// Sends `close` and waits for the process to exit.
    pub fn close(mut self) -> Result<std::process::ExitStatus> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<std::process::ExitStatus> {
        // An agent that acknowledges `close` gets a grace period to exit.
        let mut acknowledged = false;
        if !self.closed {
            self.closed = true;
            if self.write_request(&AgentRequest::control(RequestKind::Close)).is_ok() {
                acknowledged = self.read_line().is_ok();
            }
            self.stdin = None;
        }
        let grace = if acknowledged {
            Duration::from_secs(2)
        } else {
            Duration::ZERO
        };
        let deadline = std::time::Instant::now() + grace;
        loop {
            if let Some(status) = self.child.try_wait().map_err(|e| Error::io("agent", e))? {
                return Ok(status);
            }
            if std::time::Instant::now() >= deadline {
                let _ = self.child.kill();
                return self.child.wait().map_err(|e| Error::io("agent", e));
            }
            thread::sleep(Duration::from_millis(5));
        }
    }
}

fn check_response(resp: &AgentResponse) -> Result<()> {
    if let Some(aux) = &resp.aux_tokens {
        if aux.len() != resp.tokens.len() {
            return Err(Error::TrackLengthMismatch {
                phonemes: resp.tokens.len(),
                prosody: aux.len(),
            });
        }
    }
    if let Some(ms) = resp.compute_ms {
        if !(ms >= 0.0) || !ms.is_finite() {
            return Err(Error::ProtocolError(format!("invalid compute_ms {ms}")));
        }
    }
    Ok(())
}

impl Agent for ExternalAgent {
    fn call(&mut self, request: &AgentRequest) -> Result<AgentResponse> {
        if self.closed {
            return Err(Error::AgentCrashed);
        }
        if request.kind == RequestKind::Close {
            self.shutdown()?;
            return Ok(AgentResponse::default());
        }
        self.roundtrip(request)
    }
}

impl Drop for ExternalAgent {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}
