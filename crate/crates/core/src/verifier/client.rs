//! Batch submission to a line-protocol verifier over TCP.
//!
//! Each worker holds one connection and sends one job at a time. A job that
//! outlives its timeout is reported as `timeout` and the connection is
//! replaced; a connection that dies mid-job is reported as `error`. Only a
//! verifier that cannot be reached at all fails the whole batch.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use crate::error::{invalid, GarError, Result};
use crate::types::VerdictStatus;

use super::detect::contains_escape_tactic;
use super::protocol::{parse_result, to_line, VerifyJob, VerifyResult};

pub const DEFAULT_TIMEOUT_SECS: f64 = 60.0;
pub const DEFAULT_WORKERS: usize = 8;

/// Grace period on top of a job's own timeout before the client gives up.
const READ_GRACE: Duration = Duration::from_millis(250);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub endpoint: String,
    pub workers: usize,
    pub timeout_secs: f64,
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            workers: DEFAULT_WORKERS,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
        }
    }
}

pub struct VerifierClient {
    config: ClientConfig,
    replay: Option<Mutex<File>>,
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

enum Exchange {
    Done(VerifyResult),
    TimedOut,
    Broken(String),
}

impl VerifierClient {
    pub fn new(config: ClientConfig) -> Result<Self> {
        if config.workers == 0 {
            return Err(GarError::Config {
                key: "verifier_workers".into(),
                reason: "must be at least 1".into(),
            });
        }
        if !(config.timeout_secs > 0.0 && config.timeout_secs.is_finite()) {
            return Err(GarError::Config {
                key: "verifier_timeout_secs".into(),
                reason: format!("must be positive, got {}", config.timeout_secs),
            });
        }
        Ok(Self { config, replay: None })
    }

    /// Appends every request and response line to `path`.
    pub fn with_replay_log(mut self, path: &Path) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        self.replay = Some(Mutex::new(f));
        Ok(self)
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// A job with the client's default timeout.
    pub fn job(&self, job_id: impl Into<String>, statement: impl Into<String>, proof: impl Into<String>) -> VerifyJob {
        VerifyJob {
            job_id: job_id.into(),
            statement: statement.into(),
            proof: proof.into(),
            timeout: self.config.timeout_secs,
        }
    }

    fn connect(&self) -> Result<Connection> {
        let addrs: Vec<_> = self
            .config
            .endpoint
            .to_socket_addrs()
            .map_err(|e| GarError::Transport(format!("cannot resolve `{}`: {e}", self.config.endpoint)))?
            .collect();
        let mut last = None;
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    let reader = BufReader::new(stream.try_clone()?);
                    return Ok(Connection { reader, writer: stream });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(GarError::Transport(match last {
            Some(e) => format!("cannot connect to `{}`: {e}", self.config.endpoint),
            None => format!("`{}` resolved to no address", self.config.endpoint),
        }))
    }

    fn log(&self, line: &str) -> Result<()> {
        if let Some(f) = &self.replay {
            let mut f = f.lock().map_err(|_| invalid("replay log lock poisoned"))?;
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    fn exchange(&self, conn: &mut Connection, job: &VerifyJob, request: &str) -> Exchange {
        let wait = Duration::from_secs_f64(job.timeout) + READ_GRACE;
        if let Err(e) = conn.reader.get_ref().set_read_timeout(Some(wait)) {
            return Exchange::Broken(e.to_string());
        }
        if let Err(e) = conn
            .writer
            .write_all(request.as_bytes())
            .and_then(|_| conn.writer.write_all(b"\n"))
            .and_then(|_| conn.writer.flush())
        {
            return Exchange::Broken(format!("send failed: {e}"));
        }
        let mut line = String::new();
        match conn.reader.read_line(&mut line) {
            Ok(0) => Exchange::Broken("verifier closed the connection".into()),
            Ok(_) => match parse_result(&line) {
                Ok(r) if r.job_id == job.job_id => Exchange::Done(r),
                Ok(r) => Exchange::Broken(format!("answer for `{}` while waiting on `{}`", r.job_id, job.job_id)),
                Err(e) => Exchange::Broken(e.to_string()),
            },
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Exchange::TimedOut,
            Err(e) => Exchange::Broken(format!("receive failed: {e}")),
        }
    }

    /// Sends every job and returns exactly one result per job, in job order.
    pub fn submit_batch(&self, jobs: &[VerifyJob]) -> Result<Vec<VerifyResult>> {
        if jobs.is_empty() {
            return Err(invalid("empty verification batch"));
        }
        let mut ids = HashSet::new();
        for j in jobs {
            if !ids.insert(j.job_id.as_str()) {
                return Err(invalid(format!("duplicate job id `{}`", j.job_id)));
            }
            if !(j.timeout > 0.0 && j.timeout.is_finite()) {
                return Err(invalid(format!("job `{}` has timeout {}", j.job_id, j.timeout)));
            }
        }
        let queue = Mutex::new((0..jobs.len()).collect::<VecDeque<_>>());
        let results = Mutex::new(HashMap::with_capacity(jobs.len()));
        let workers = self.config.workers.min(jobs.len());
        let outcomes: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| scope.spawn(|| self.worker(jobs, &queue, &results)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(invalid("verifier worker panicked"))))
                .collect()
        });
        for o in outcomes {
            o?;
        }
        let mut results = results.into_inner().map_err(|_| invalid("result lock poisoned"))?;
        jobs.iter()
            .map(|j| {
                results
                    .remove(&j.job_id)
                    .ok_or_else(|| invalid(format!("job `{}` produced no result", j.job_id)))
            })
            .collect()
    }

    fn worker(
        &self,
        jobs: &[VerifyJob],
        queue: &Mutex<VecDeque<usize>>,
        results: &Mutex<HashMap<String, VerifyResult>>,
    ) -> Result<()> {
        let mut conn: Option<Connection> = None;
        loop {
            let Some(idx) = queue.lock().map_err(|_| invalid("queue lock poisoned"))?.pop_front() else {
                return Ok(());
            };
            let job = &jobs[idx];
            let c = match conn.take() {
                Some(c) => c,
                None => match self.connect() {
                    Ok(c) => c,
                    Err(e) => {
                        // put the job back so the batch fails as a whole, not silently
                        queue
                            .lock()
                            .map_err(|_| invalid("queue lock poisoned"))?
                            .push_front(idx);
                        return Err(e);
                    }
                },
            };
            let mut c = c;
            let request = to_line(job)?;
            self.log(&request)?;
            let mut result = match self.exchange(&mut c, job, &request) {
                Exchange::Done(r) => {
                    conn = Some(c);
                    r
                }
                Exchange::TimedOut => VerifyResult::new(
                    job.job_id.clone(),
                    VerdictStatus::Timeout,
                    format!("no answer within {} s", job.timeout),
                ),
                Exchange::Broken(why) => VerifyResult::new(job.job_id.clone(), VerdictStatus::Error, why),
            };
            result.escape |= contains_escape_tactic(&job.proof);
            self.log(&to_line(&result)?)?;
            results
                .lock()
                .map_err(|_| invalid("result lock poisoned"))?
                .insert(job.job_id.clone(), result);
        }
    }
}
