//! Run configuration: a flat TOML namespace, one key per field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arena::{FuserCodec, ProverCodec, ProverContext};
use crate::error::{GarError, Result};
use crate::grpo::{GrpoHyperparams, RatioDenominator};
use crate::rewards::RewardRules;
use crate::verifier::client::{DEFAULT_TIMEOUT_SECS, DEFAULT_WORKERS};

pub const ENV_CHECKPOINT_DIR: &str = "GAR_CHECKPOINT_DIR";
pub const ENV_VERIFIER_ENDPOINT: &str = "GAR_VERIFIER_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierKind {
    /// Exact in-process checking.
    #[default]
    Arena,
    /// An external verifier at `verifier_endpoint`.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: u32,
    pub statements_per_iteration: usize,
    pub proofs_per_statement: usize,
    /// Attempt budget for the logged pass@x.
    pub pass_at_x: usize,
    pub seed: u64,
    pub modification_penalty: bool,
    /// Add compiled fused statements back into the repository.
    pub accumulate_fused: bool,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub repository: Option<PathBuf>,
    /// Size of the generated repository when `repository` is unset.
    pub repository_size: usize,
    pub base_min_len: usize,
    pub base_max_len: usize,

    pub modulus: u32,
    pub max_difficulty: usize,
    pub max_rounds: u32,
    pub fuser_buckets: usize,
    pub prover_context: ProverContext,

    pub fuser_epsilon: f64,
    pub fuser_beta: f64,
    pub fuser_learning_rate: f64,
    pub fuser_updates_per_iteration: u32,
    pub prover_epsilon: f64,
    pub prover_beta: f64,
    pub prover_learning_rate: f64,
    pub prover_updates_per_iteration: u32,
    pub prover_ratio_denominator: RatioDenominator,

    pub verifier: VerifierKind,
    pub verifier_endpoint: String,
    pub verifier_workers: usize,
    pub verifier_timeout_secs: f64,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GrpoHyperparams::default();
        Self {
            iterations: 5,
            statements_per_iteration: 1024,
            proofs_per_statement: 16,
            pass_at_x: 16,
            seed: 0,
            modification_penalty: true,
            accumulate_fused: false,
            repository: None,
            repository_size: 64,
            base_min_len: 1,
            base_max_len: 3,
            modulus: 5,
            max_difficulty: 30,
            max_rounds: 5,
            fuser_buckets: 3,
            prover_context: ProverContext::Shared,
            fuser_epsilon: g.epsilon,
            fuser_beta: g.beta,
            fuser_learning_rate: g.learning_rate,
            fuser_updates_per_iteration: g.updates_per_iteration,
            prover_epsilon: g.epsilon,
            prover_beta: g.beta,
            prover_learning_rate: g.learning_rate,
            prover_updates_per_iteration: g.updates_per_iteration,
            prover_ratio_denominator: RatioDenominator::Old,
            verifier: VerifierKind::Arena,
            verifier_endpoint: "127.0.0.1:7878".into(),
            verifier_workers: DEFAULT_WORKERS,
            verifier_timeout_secs: DEFAULT_TIMEOUT_SECS,
            checkpoint_dir: None,
        }
    }
}

fn config_err(key: &str, reason: impl Into<String>) -> GarError {
    GarError::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Names the key on the line a TOML error points at.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next()?;
    let (key, _) = line.split_once('=')?;
    let key = key.trim().trim_matches('"');
    (!key.is_empty()).then(|| key.to_string())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let key = message
                .split('`')
                .nth(1)
                .filter(|_| message.starts_with("unknown field"))
                .map(str::to_string)
                .or_else(|| e.span().and_then(|s| key_at(text, s.start)))
                .unwrap_or_else(|| "<document>".into());
            config_err(&key, message.trim())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err("<document>", e.to_string()))
    }

    /// Applies `GAR_CHECKPOINT_DIR` and `GAR_VERIFIER_ENDPOINT` if set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(dir) = std::env::var(ENV_CHECKPOINT_DIR) {
            if !dir.is_empty() {
                self.checkpoint_dir = Some(PathBuf::from(dir));
            }
        }
        if let Ok(ep) = std::env::var(ENV_VERIFIER_ENDPOINT) {
            if !ep.is_empty() {
                self.verifier_endpoint = ep;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.statements_per_iteration < 2 {
            return Err(config_err("statements_per_iteration", "must be at least 2"));
        }
        if self.proofs_per_statement < 2 {
            return Err(config_err("proofs_per_statement", "must be at least 2"));
        }
        if self.pass_at_x == 0 || self.pass_at_x > self.proofs_per_statement {
            return Err(config_err(
                "pass_at_x",
                format!("must lie in 1..={}", self.proofs_per_statement),
            ));
        }
        if self.modulus < 2 {
            return Err(config_err("modulus", "must be at least 2"));
        }
        if self.repository.is_none() && self.repository_size < 2 {
            return Err(config_err("repository_size", "must be at least 2"));
        }
        if self.base_min_len == 0 || self.base_min_len > self.base_max_len {
            return Err(config_err(
                "base_min_len",
                "must satisfy 1 <= base_min_len <= base_max_len",
            ));
        }
        if self.max_difficulty == 0 {
            return Err(config_err("max_difficulty", "must be at least 1"));
        }
        if self.max_rounds == 0 {
            return Err(config_err("max_rounds", "must be at least 1"));
        }
        if self.fuser_buckets == 0 {
            return Err(config_err("fuser_buckets", "must be at least 1"));
        }
        self.fuser_hyperparams().validate("fuser_")?;
        self.prover_hyperparams().validate("prover_")?;
        if self.verifier_workers == 0 {
            return Err(config_err("verifier_workers", "must be at least 1"));
        }
        if !(self.verifier_timeout_secs > 0.0 && self.verifier_timeout_secs.is_finite()) {
            return Err(config_err("verifier_timeout_secs", "must be positive"));
        }
        Ok(())
    }

    pub fn fuser_hyperparams(&self) -> GrpoHyperparams {
        GrpoHyperparams {
            epsilon: self.fuser_epsilon,
            beta: self.fuser_beta,
            learning_rate: self.fuser_learning_rate,
            updates_per_iteration: self.fuser_updates_per_iteration,
            ratio_denominator: RatioDenominator::Old,
        }
    }

    pub fn prover_hyperparams(&self) -> GrpoHyperparams {
        GrpoHyperparams {
            epsilon: self.prover_epsilon,
            beta: self.prover_beta,
            learning_rate: self.prover_learning_rate,
            updates_per_iteration: self.prover_updates_per_iteration,
            ratio_denominator: self.prover_ratio_denominator,
        }
    }

    pub fn reward_rules(&self) -> RewardRules {
        RewardRules {
            modification_penalty: self.modification_penalty,
        }
    }

    pub fn prover_codec(&self) -> ProverCodec {
        ProverCodec {
            modulus: self.modulus,
            max_difficulty: self.max_difficulty,
            context: self.prover_context,
        }
    }

    pub fn fuser_codec(&self) -> FuserCodec {
        FuserCodec {
            modulus: self.modulus,
            max_rounds: self.max_rounds,
            buckets: self.fuser_buckets,
        }
    }
}
