//! Deterministic in-process verifier speaking the line protocol, for tests
//! and local runs without a real proof checker.
//!
//! Rules are tried in order against the proof body; the first whose pattern
//! occurs in the proof decides the outcome. Without a matching rule the
//! fallback applies: a fixed status, or arena checking of rendered chain
//! statements and proofs.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::arena::{self, ChainProof};
use crate::error::Result;
use crate::types::VerdictStatus;

use super::detect::{contains_escape_tactic, detect_modification};
use super::protocol::{parse_job, to_line, VerifyJob, VerifyResult};

#[derive(Debug, Clone, PartialEq)]
pub enum MockAction {
    Respond(VerdictStatus),
    /// Wait, then answer `pass`.
    Sleep(Duration),
    /// Drop the connection without answering.
    Crash,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockRule {
    pub pattern: String,
    pub action: MockAction,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fallback {
    Respond(VerdictStatus),
    /// Parse chain statements and proofs and check them exactly.
    Arena,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockConfig {
    pub rules: Vec<MockRule>,
    pub fallback: Fallback,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            fallback: Fallback::Respond(VerdictStatus::Pass),
        }
    }
}

impl MockConfig {
    pub fn arena() -> Self {
        Self {
            rules: Vec::new(),
            fallback: Fallback::Arena,
        }
    }

    pub fn rule(mut self, pattern: impl Into<String>, action: MockAction) -> Self {
        self.rules.push(MockRule {
            pattern: pattern.into(),
            action,
        });
        self
    }
}

/// Outcome for one job, or `None` when the connection should be dropped.
pub fn respond(config: &MockConfig, job: &VerifyJob) -> Option<VerifyResult> {
    let rule = config.rules.iter().find(|r| job.proof.contains(&r.pattern));
    let mut result = match rule.map(|r| &r.action) {
        Some(MockAction::Crash) => return None,
        Some(MockAction::Sleep(d)) => {
            std::thread::sleep(*d);
            VerifyResult::new(job.job_id.clone(), VerdictStatus::Pass, "slept")
        }
        Some(MockAction::Respond(status)) => VerifyResult::new(job.job_id.clone(), *status, "rule"),
        None => match config.fallback {
            Fallback::Respond(status) => VerifyResult::new(job.job_id.clone(), status, "default"),
            Fallback::Arena => arena_check(job),
        },
    };
    result.escape = contains_escape_tactic(&job.proof);
    result.modified |= result.status != VerdictStatus::Error && detect_modification(&job.statement, &job.proof);
    Some(result)
}

fn arena_check(job: &VerifyJob) -> VerifyResult {
    let fail = |status, why: String| VerifyResult::new(job.job_id.clone(), status, why);
    let statement = match arena::parse_formal(&job.statement) {
        Ok((_, s)) => s,
        Err(e) => return fail(VerdictStatus::Error, e.to_string()),
    };
    let proof = match arena::parse_proof(&job.proof) {
        Ok(p) => p,
        Err(e) => return fail(VerdictStatus::Fail, e.to_string()),
    };
    let honest = proof.header == statement;
    if !honest && proof.header != statement.restated(proof.header.target) {
        let mut r = fail(
            VerdictStatus::Fail,
            "restated goal is not the statement or its weakening".into(),
        );
        r.modified = true;
        return r;
    }
    let verdict = arena::verify(
        &statement,
        &ChainProof {
            declared_target: proof.header.target,
            values: proof.values,
        },
    );
    let mut r = VerifyResult::new(job.job_id.clone(), verdict.status, "arena");
    r.modified = verdict.modified;
    r
}

/// A running mock verifier; stops when dropped.
pub struct MockVerifier {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl MockVerifier {
    /// Listens on an ephemeral localhost port.
    pub fn spawn(config: MockConfig) -> Result<Self> {
        Self::bind("127.0.0.1:0", config)
    }

    pub fn bind(addr: &str, config: MockConfig) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let config = Arc::new(config);
        let flag = Arc::clone(&stop);
        let accept = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let config = Arc::clone(&config);
                std::thread::spawn(move || serve(stream, &config));
            }
        });
        Ok(Self {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    /// Blocks until the listener thread ends (it never does on its own).
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockVerifier {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, config: &MockConfig) {
    let Ok(mut writer) = stream.try_clone() else { return };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { return };
        if line.trim().is_empty() {
            continue;
        }
        let reply = match parse_job(&line) {
            Ok(job) => match respond(config, &job) {
                Some(r) => r,
                None => return,
            },
            Err(e) => VerifyResult::new("", VerdictStatus::Error, e.to_string()),
        };
        let Ok(text) = to_line(&reply) else { return };
        if writeln!(writer, "{text}").and_then(|_| writer.flush()).is_err() {
            return;
        }
    }
}
