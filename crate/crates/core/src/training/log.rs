//! Run log (JSON lines), metrics table and checkpoints.
//!
//! Run log layout: a header line `{"kind":"header","version":1,"config":{..}}`
//! followed by one `{"kind":"iteration","record":{..},"statements":[..]}`
//! line per iteration. Wall-clock time is kept out of the log so identical
//! configurations give identical bytes; it goes to a separate timings file.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GarError, Result};
use crate::types::IterationRecord;

use super::config::RunConfig;
use super::run::{RunState, StatementDump};

pub const LOG_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;
pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TIMINGS_FILE: &str = "timings.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header {
        version: u32,
        config: RunConfig,
    },
    Iteration {
        record: IterationRecord,
        statements: Vec<StatementDump>,
    },
}

/// Configuration as written to the log header: output locations are
/// dropped so they do not affect the log bytes.
pub fn loggable_config(config: &RunConfig) -> RunConfig {
    RunConfig {
        checkpoint_dir: None,
        ..config.clone()
    }
}

pub struct RunLogWriter {
    out: BufWriter<File>,
}

impl RunLogWriter {
    /// Starts a fresh log.
    pub fn create(path: &Path, config: &RunConfig) -> Result<Self> {
        let mut w = Self {
            out: BufWriter::new(File::create(path)?),
        };
        w.write(&LogLine::Header {
            version: LOG_VERSION,
            config: loggable_config(config),
        })?;
        Ok(w)
    }

    /// Reopens a log keeping the header and the first `iterations` records.
    pub fn resume(path: &Path, config: &RunConfig, iterations: u32) -> Result<Self> {
        let kept: Vec<String> = match fs::read_to_string(path) {
            Ok(text) => text.lines().take(iterations as usize + 1).map(str::to_string).collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        if kept.len() != iterations as usize + 1 {
            // nothing usable to continue; start over with a header only
            let mut w = Self::create(path, config)?;
            w.out.flush()?;
            return Ok(w);
        }
        let mut out = BufWriter::new(File::create(path)?);
        for line in kept {
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write(&mut self, line: &LogLine) -> Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: RunConfig,
    pub iterations: Vec<(IterationRecord, Vec<StatementDump>)>,
}

impl RunLog {
    pub fn records(&self) -> Vec<IterationRecord> {
        self.iterations.iter().map(|(r, _)| r.clone()).collect()
    }
}

pub fn parse_run_log(text: &str) -> Result<RunLog> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).enumerate();
    let config = match lines.next() {
        Some((_, l)) => match serde_json::from_str(l) {
            Ok(LogLine::Header { version, config }) if version == LOG_VERSION => config,
            Ok(LogLine::Header { version, .. }) => {
                return Err(GarError::Parse(format!(
                    "run log version {version}, expected {LOG_VERSION}"
                )))
            }
            Ok(_) => return Err(GarError::Parse("run log does not start with a header".into())),
            Err(e) => return Err(GarError::Parse(format!("run log line 1: {e}"))),
        },
        None => return Err(GarError::Parse("empty run log".into())),
    };
    let mut iterations = Vec::new();
    for (i, l) in lines {
        match serde_json::from_str(l) {
            Ok(LogLine::Iteration { record, statements }) => iterations.push((record, statements)),
            Ok(_) => return Err(GarError::Parse(format!("run log line {}: second header", i + 1))),
            Err(e) => return Err(GarError::Parse(format!("run log line {}: {e}", i + 1))),
        }
    }
    Ok(RunLog { config, iterations })
}

pub fn read_run_log(path: &Path) -> Result<RunLog> {
    parse_run_log(&fs::read_to_string(path)?)
}

pub const METRIC_COLUMNS: [&str; 6] = [
    "iteration",
    "pass_at_x",
    "avg_correctness",
    "modification_rate",
    "mean_difficulty",
    "base_policy_avg_correctness",
];

/// CSV with one row per iteration.
pub fn metrics_csv(records: &[IterationRecord]) -> String {
    let mut out = METRIC_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.4},{:.6}\n",
            r.iteration,
            r.pass_at_x,
            r.avg_correctness,
            r.modification_rate,
            r.mean_difficulty,
            r.base_policy_avg_correctness
        ));
    }
    out
}

pub fn append_timing(dir: &Path, iteration: u32, secs: f64) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join(TIMINGS_FILE))?;
    writeln!(f, "{{\"iteration\":{iteration},\"wall_time_secs\":{secs:.3}}}")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub state: RunState,
}

/// Writes atomically: a temporary file renamed over the target.
pub fn checkpoint_save(state: &RunState, config: &RunConfig, path: &Path) -> Result<()> {
    let tmp: PathBuf = path.with_extension("json.tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(
            &mut out,
            &Checkpoint {
                version: CHECKPOINT_VERSION,
                config: loggable_config(config),
                state: state.clone(),
            },
        )?;
        out.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    #[derive(Deserialize)]
    struct VersionOnly {
        version: u32,
    }
    let v: VersionOnly =
        serde_json::from_str(&text).map_err(|e| GarError::Checkpoint(format!("{}: {e}", path.display())))?;
    if v.version != CHECKPOINT_VERSION {
        return Err(GarError::Checkpoint(format!(
            "{}: version {}, expected {CHECKPOINT_VERSION}",
            path.display(),
            v.version
        )));
    }
    let cp: Checkpoint =
        serde_json::from_str(&text).map_err(|e| GarError::Checkpoint(format!("{}: {e}", path.display())))?;
    if cp.state.records.len() != cp.state.iteration as usize {
        return Err(GarError::Checkpoint(format!(
            "{}: {} records for {} iterations",
            path.display(),
            cp.state.records.len(),
            cp.state.iteration
        )));
    }
    Ok(cp)
}
