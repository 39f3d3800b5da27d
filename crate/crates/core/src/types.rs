//! Shared domain types: statements with lineage, proof attempts, verdicts
//! and per-statement rollout groups.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Opaque statement identifier, unique within a run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StatementId(pub String);

impl StatementId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StatementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Where a statement came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lineage {
    Base,
    Fused {
        parent_a: StatementId,
        parent_b: StatementId,
        iteration: u32,
    },
}

/// A problem with its informal and formal renderings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub id: StatementId,
    pub informal_text: String,
    pub formal_text: String,
    pub lineage: Lineage,
    pub compile_ok: bool,
}

impl Statement {
    pub fn base(id: StatementId, informal: impl Into<String>, formal: impl Into<String>) -> Self {
        Self {
            id,
            informal_text: informal.into(),
            formal_text: formal.into(),
            lineage: Lineage::Base,
            compile_ok: false,
        }
    }

    /// Builds the fused child of two distinct parents. The child starts
    /// uncompiled; see [`Statement::mark_compiled`].
    pub fn fused(
        id: StatementId,
        parent_a: &Statement,
        parent_b: &Statement,
        informal: impl Into<String>,
        formal: impl Into<String>,
        iteration: u32,
    ) -> Result<Self> {
        if parent_a.id == parent_b.id {
            return Err(invalid(format!(
                "fusion needs two distinct parents, got `{}` twice",
                parent_a.id
            )));
        }
        Ok(Self {
            id,
            informal_text: informal.into(),
            formal_text: formal.into(),
            lineage: Lineage::Fused {
                parent_a: parent_a.id.clone(),
                parent_b: parent_b.id.clone(),
                iteration,
            },
            compile_ok: false,
        })
    }

    /// Records the outcome of the compile check. A statement with empty
    /// formal text never compiles.
    pub fn mark_compiled(mut self, ok: bool) -> Self {
        self.compile_ok = ok && !self.formal_text.is_empty();
        self
    }

    pub fn iteration(&self) -> u32 {
        match self.lineage {
            Lineage::Base => 0,
            Lineage::Fused { iteration, .. } => iteration,
        }
    }
}

/// Builds a fused statement from two parents; identical parents are rejected.
pub fn make_fused_statement(
    id: StatementId,
    parent_a: &Statement,
    parent_b: &Statement,
    informal: &str,
    formal: &str,
    iteration: u32,
) -> Result<Statement> {
    Statement::fused(id, parent_a, parent_b, informal, formal, iteration)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    Error,
    Timeout,
}

/// Outcome of checking one proof.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    /// The proof changed the statement it proves.
    pub modified: bool,
    /// The proof closed a goal with an escape tactic (`sorry`/`admit`).
    pub used_escape_tactic: bool,
}

impl Verdict {
    pub fn new(status: VerdictStatus) -> Self {
        Self {
            status,
            modified: false,
            used_escape_tactic: false,
        }
    }

    pub fn error() -> Self {
        Self::new(VerdictStatus::Error)
    }

    /// Counts toward the pass rate: verified, unmodified, no escape tactic.
    pub fn is_clean_pass(&self) -> bool {
        self.status == VerdictStatus::Pass && !self.modified && !self.used_escape_tactic
    }

    /// Verified without an escape tactic, possibly against a modified statement.
    pub fn is_verified(&self) -> bool {
        self.status == VerdictStatus::Pass && !self.used_escape_tactic
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofAttempt {
    pub statement_id: StatementId,
    pub body: String,
    pub verdict: Verdict,
}

/// One statement together with its proof attempts and derived rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub statement: Statement,
    pub attempts: Vec<ProofAttempt>,
    pub pass_rate: f64,
    pub modification_rate: f64,
}

impl RolloutGroup {
    pub fn n(&self) -> usize {
        self.attempts.len()
    }

    pub fn pass_count(&self) -> usize {
        self.attempts.iter().filter(|a| a.verdict.is_clean_pass()).count()
    }

    pub fn modified_count(&self) -> usize {
        self.attempts.iter().filter(|a| a.verdict.modified).count()
    }
}

/// Computes the empirical pass rate and modification rate of a statement's attempts.
pub fn group_from_attempts(statement: Statement, attempts: Vec<ProofAttempt>) -> Result<RolloutGroup> {
    if attempts.is_empty() {
        return Err(invalid("a rollout group needs at least one attempt"));
    }
    if let Some(stray) = attempts.iter().find(|a| a.statement_id != statement.id) {
        return Err(invalid(format!(
            "attempt for `{}` filed under statement `{}`",
            stray.statement_id, statement.id
        )));
    }
    let n = attempts.len() as f64;
    let passes = attempts.iter().filter(|a| a.verdict.is_clean_pass()).count();
    let modified = attempts.iter().filter(|a| a.verdict.modified).count();
    Ok(RolloutGroup {
        statement,
        attempts,
        pass_rate: passes as f64 / n,
        modification_rate: modified as f64 / n,
    })
}

/// Per-iteration bookkeeping and metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub generated_count: usize,
    pub compile_pass_count: usize,
    pub filtered_for_prover_count: usize,
    pub pass_at_x: f64,
    pub x: usize,
    /// Average proof correctness of the prover that produced this iteration's rollouts.
    pub avg_correctness: f64,
    /// Fraction of statements with at least one modified attempt.
    pub modification_rate: f64,
    pub mean_difficulty: f64,
    /// Frozen iteration-0 prover on this iteration's statements.
    pub base_policy_avg_correctness: f64,
    /// Prover after this iteration's update, on the same statements.
    pub updated_prover_avg_correctness: f64,
    pub fuser_mean_reward: f64,
    pub fuser_objective: f64,
    pub prover_objective: f64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}
