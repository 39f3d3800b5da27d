//! Wire format: one JSON object per line. Field order is fixed by the struct
//! definitions, so a canonical line survives `parse` then `to_line` unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{GarError, Result};
use crate::types::{Verdict, VerdictStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyJob {
    pub job_id: String,
    pub statement: String,
    pub proof: String,
    /// Seconds.
    pub timeout: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyResult {
    pub job_id: String,
    pub status: VerdictStatus,
    pub modified: bool,
    pub escape: bool,
    pub diagnostics: String,
}

impl VerifyResult {
    pub fn new(job_id: impl Into<String>, status: VerdictStatus, diagnostics: impl Into<String>) -> Self {
        Self {
            job_id: job_id.into(),
            status,
            modified: false,
            escape: false,
            diagnostics: diagnostics.into(),
        }
    }

    pub fn verdict(&self) -> Verdict {
        Verdict {
            status: self.status,
            modified: self.modified,
            used_escape_tactic: self.escape,
        }
    }
}

fn strip_newline(line: &str) -> &str {
    line.strip_suffix('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .unwrap_or(line)
}

pub fn parse_job(line: &str) -> Result<VerifyJob> {
    let job: VerifyJob =
        serde_json::from_str(strip_newline(line)).map_err(|e| GarError::Parse(format!("request: {e}")))?;
    if !(job.timeout > 0.0 && job.timeout.is_finite()) {
        return Err(GarError::Parse(format!(
            "request `{}`: timeout must be positive, got {}",
            job.job_id, job.timeout
        )));
    }
    Ok(job)
}

pub fn parse_result(line: &str) -> Result<VerifyResult> {
    serde_json::from_str(strip_newline(line)).map_err(|e| GarError::Parse(format!("response: {e}")))
}

/// Serializes a message without the trailing newline.
pub fn to_line<T: Serialize>(msg: &T) -> Result<String> {
    Ok(serde_json::to_string(msg)?)
}

/// A line of a replay log: either direction of the exchange.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplayEntry {
    Request(VerifyJob),
    Response(VerifyResult),
}

/// Parses a replay log back into its messages, in file order.
pub fn parse_replay(text: &str) -> Result<Vec<ReplayEntry>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            parse_job(line)
                .map(ReplayEntry::Request)
                .or_else(|_| parse_result(line).map(ReplayEntry::Response))
                .map_err(|_| GarError::Parse(format!("replay line {} is neither request nor response", i + 1)))
        })
        .collect()
}
