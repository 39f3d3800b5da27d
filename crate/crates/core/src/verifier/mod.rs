//! Proof checking: exact arena checking, and a client for external
//! verifiers speaking a JSON-lines protocol over TCP.

pub mod client;
pub mod detect;
pub mod mock;
pub mod protocol;

pub use client::{ClientConfig, VerifierClient};
pub use detect::{contains_escape_tactic, detect_modification};
pub use mock::{Fallback, MockAction, MockConfig, MockVerifier};
pub use protocol::{VerifyJob, VerifyResult};

use crate::arena::{self, ChainProof, ChainStatement};
use crate::error::Result;
use crate::types::Verdict;

/// One proof to check, with both its structured and rendered forms.
#[derive(Debug, Clone, Copy)]
pub struct CheckRequest<'a> {
    pub job_id: &'a str,
    pub statement: &'a ChainStatement,
    pub formal: &'a str,
    pub proof: &'a ChainProof,
    pub proof_text: &'a str,
}

/// Anything that can turn a batch of proofs into verdicts, one per request
/// and in the same order.
pub trait ProofChecker: Send + Sync {
    fn check_batch(&self, requests: &[CheckRequest<'_>]) -> Result<Vec<Verdict>>;
}

/// Exact in-process checking.
#[derive(Debug, Clone, Copy, Default)]
pub struct ArenaChecker;

impl ProofChecker for ArenaChecker {
    fn check_batch(&self, requests: &[CheckRequest<'_>]) -> Result<Vec<Verdict>> {
        Ok(requests.iter().map(|r| arena::verify(r.statement, r.proof)).collect())
    }
}

/// Checking through an external verifier. Escape tactics and restated
/// headers are also detected on the client side.
pub struct RemoteChecker {
    client: VerifierClient,
}

impl RemoteChecker {
    pub fn new(client: VerifierClient) -> Self {
        Self { client }
    }
}

impl ProofChecker for RemoteChecker {
    fn check_batch(&self, requests: &[CheckRequest<'_>]) -> Result<Vec<Verdict>> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let jobs: Vec<VerifyJob> = requests
            .iter()
            .map(|r| self.client.job(r.job_id, r.formal, r.proof_text))
            .collect();
        let results = self.client.submit_batch(&jobs)?;
        Ok(results
            .iter()
            .zip(requests)
            .map(|(res, req)| {
                let mut v = res.verdict();
                v.modified |= detect_modification(req.formal, req.proof_text);
                v.used_escape_tactic |= contains_escape_tactic(req.proof_text);
                v
            })
            .collect())
    }
}
