//! The outer training loop, its configuration, metrics, logs and
//! checkpoints.

pub mod config;
pub mod log;
pub mod metrics;
pub mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{RunConfig, VerifierKind};
pub use log::{checkpoint_load, checkpoint_save, metrics_csv, parse_run_log, read_run_log, Checkpoint, RunLog};
pub use metrics::{average_proof_correctness, pass_at_x, statement_modification_metric};
pub use run::{
    build_repository, run_iteration, sample_base_pairs, IterationOutput, RepoEntry, RunState, StatementDump,
};

use crate::arena::{ChainStatement, ProverCodec};
use crate::error::{GarError, Result};
use crate::policy::Policy;
use crate::seeds;
use crate::types::{IterationRecord, Statement};
use crate::verifier::{ArenaChecker, ClientConfig, ProofChecker, RemoteChecker, VerifierClient};

/// Builds the checker named by the configuration.
pub fn make_checker(config: &RunConfig) -> Result<Box<dyn ProofChecker>> {
    Ok(match config.verifier {
        VerifierKind::Arena => Box::new(ArenaChecker),
        VerifierKind::Remote => Box::new(RemoteChecker::new(VerifierClient::new(ClientConfig {
            endpoint: config.verifier_endpoint.clone(),
            workers: config.verifier_workers,
            timeout_secs: config.verifier_timeout_secs,
        })?)),
    })
}

/// Drives iterations and, when a checkpoint directory is configured, keeps
/// the run log, timings and a rolling checkpoint there.
pub struct Trainer {
    config: RunConfig,
    state: RunState,
    checker: Box<dyn ProofChecker>,
    log: Option<log::RunLogWriter>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        let state = RunState::initial(&config)?;
        let checker = make_checker(&config)?;
        let log = match &config.checkpoint_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let _ = fs::remove_file(dir.join(log::TIMINGS_FILE));
                Some(log::RunLogWriter::create(&dir.join(log::RUN_LOG_FILE), &config)?)
            }
            None => None,
        };
        Ok(Self {
            config,
            state,
            checker,
            log,
        })
    }

    /// Continues from `checkpoint_dir/checkpoint.json`. The checkpoint must
    /// come from the same configuration apart from the iteration count and
    /// output/verifier locations.
    pub fn resume(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let dir = config.checkpoint_dir.clone().ok_or_else(|| GarError::Config {
            key: "checkpoint_dir".into(),
            reason: "resuming needs a checkpoint directory".into(),
        })?;
        let cp = checkpoint_load(&dir.join(log::CHECKPOINT_FILE))?;
        let comparable = |c: &RunConfig| RunConfig {
            iterations: 0,
            checkpoint_dir: None,
            verifier_endpoint: String::new(),
            ..c.clone()
        };
        if comparable(&cp.config) != comparable(&config) {
            return Err(GarError::Checkpoint(
                "checkpoint was written under a different configuration".into(),
            ));
        }
        let log = log::RunLogWriter::resume(&dir.join(log::RUN_LOG_FILE), &config, cp.state.iteration)?;
        Ok(Self {
            checker: make_checker(&config)?,
            config,
            state: cp.state,
            log: Some(log),
        })
    }

    pub fn with_checker(mut self, checker: Box<dyn ProofChecker>) -> Self {
        self.checker = checker;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.state.records
    }

    pub fn is_finished(&self) -> bool {
        self.state.iteration >= self.config.iterations
    }

    /// Runs one iteration and persists it. State advances only on success.
    pub fn step(&mut self) -> Result<IterationOutput> {
        let started = Instant::now();
        let (next, mut output) = run_iteration(&self.state, &self.config, self.checker.as_ref())?;
        output.record.wall_time_secs = started.elapsed().as_secs_f64();
        if let Some(r) = next.records.last() {
            debug_assert_eq!(r.iteration, output.record.iteration);
        }
        if let (Some(dir), Some(log)) = (&self.config.checkpoint_dir, &mut self.log) {
            log.write(&log::LogLine::Iteration {
                record: output.record.clone(),
                statements: output.statements.clone(),
            })?;
            log::append_timing(dir, output.record.iteration, output.record.wall_time_secs)?;
            checkpoint_save(&next, &self.config, &dir.join(log::CHECKPOINT_FILE))?;
        }
        self.state = next;
        if let Some(r) = self.state.records.last_mut() {
            r.wall_time_secs = output.record.wall_time_secs;
        }
        Ok(output)
    }

    /// Runs until `iterations` are complete.
    pub fn run(&mut self) -> Result<Vec<IterationRecord>> {
        self.run_until(self.config.iterations)
    }

    /// Runs until `iteration` iterations are complete (capped by the config).
    pub fn run_until(&mut self, iteration: u32) -> Result<Vec<IterationRecord>> {
        let stop = iteration.min(self.config.iterations);
        while self.state.iteration < stop {
            self.step()?;
        }
        Ok(self.state.records.clone())
    }

    pub fn checkpoint_path(&self) -> Option<PathBuf> {
        self.config
            .checkpoint_dir
            .as_ref()
            .map(|d| d.join(log::CHECKPOINT_FILE))
    }
}

/// Convenience: run a configuration to completion.
pub fn run(config: RunConfig) -> Result<Vec<IterationRecord>> {
    Trainer::new(config)?.run()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub statements: usize,
    pub attempts: usize,
    pub pass_at_x: f64,
    pub avg_correctness: f64,
    pub modification_rate: f64,
}

/// Samples `attempts` proofs per statement from `prover` and scores them.
pub fn evaluate(
    prover: &dyn Policy,
    codec: &ProverCodec,
    statements: &[RepoEntry],
    attempts: usize,
    seed: u64,
    checker: &dyn ProofChecker,
) -> Result<EvalReport> {
    if statements.is_empty() || attempts == 0 {
        return Err(crate::error::invalid(
            "evaluation needs statements and at least one attempt",
        ));
    }
    let entries: Vec<(&Statement, &ChainStatement)> = statements.iter().map(|e| (&e.statement, &e.chain)).collect();
    let (groups, _) = run::sample_and_check(
        prover,
        codec,
        &entries,
        attempts,
        |i| seeds::derive_seed(seed, "eval", &[i as u64]),
        "eval",
        checker,
    )?;
    Ok(EvalReport {
        statements: groups.len(),
        attempts,
        pass_at_x: pass_at_x(&groups, attempts)?,
        avg_correctness: average_proof_correctness(&groups)?,
        modification_rate: statement_modification_metric(&groups)?,
    })
}

/// Loads statements from a repository file, checked against `config`.
pub fn load_statements(path: &Path, config: &RunConfig) -> Result<Vec<RepoEntry>> {
    build_repository(&RunConfig {
        repository: Some(path.to_path_buf()),
        ..config.clone()
    })
}
