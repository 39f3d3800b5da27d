//! Adversarial curriculum training of a statement fuser against a prover.
//!
//! The fuser composes pairs of base problems into harder problems; the prover
//! attempts proofs; both are updated with group-relative policy optimization.
//! The crate ships an exactly checkable toy environment ([`arena`]), a tabular
//! softmax reference policy with analytic gradients ([`policy`]), the reward
//! and objective math ([`rewards`], [`grpo`]), a client for external proof
//! checkers ([`verifier`]) and the end-to-end training loop ([`training`]).

pub mod arena;
pub mod error;
pub mod grpo;
pub mod policy;
pub mod rewards;
pub mod seeds;
pub mod training;
pub mod types;
pub mod verifier;

pub use error::{GarError, Result};
pub use types::{IterationRecord, Lineage, ProofAttempt, RolloutGroup, Statement, StatementId, Verdict, VerdictStatus};
