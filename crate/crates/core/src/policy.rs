//! Policies over fixed-vocabulary token sequences.
//!
//! [`TabularPolicy`] is the reference implementation: a position-factorized
//! softmax with one logit row per `(context, position)`. Log-probabilities,
//! their analytic gradients and exact enumeration are all cheap, which is what
//! the objective and gradient checks elsewhere rely on.

use std::ops::Deref;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GarError, Result};

/// What a policy is asked to respond to: a discrete context index and the
/// number of tokens in the response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    pub context: usize,
    pub len: usize,
}

impl Prompt {
    pub fn new(context: usize, len: usize) -> Self {
        Self { context, len }
    }
}

/// Scoring and sampling interface shared by the fuser and prover roles.
pub trait Policy: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn params(&self) -> &[f64];

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// `log pi(response | prompt)`; `response.len()` must equal `prompt.len`.
    fn log_prob(&self, prompt: Prompt, response: &[usize]) -> Result<f64>;

    /// Gradient of [`Policy::log_prob`] with respect to [`Policy::params`].
    fn grad_log_prob(&self, _prompt: Prompt, _response: &[usize]) -> Result<Vec<f64>> {
        Err(GarError::Policy("policy does not expose gradients".into()))
    }

    /// `count` independent responses; a pure function of the arguments.
    fn sample(&self, prompt: Prompt, count: usize, seed: u64) -> Result<Vec<Vec<usize>>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableData")]
pub struct TabularPolicy {
    contexts: usize,
    positions: usize,
    vocab: usize,
    theta: Vec<f64>,
}

/// Unchecked wire form of [`TabularPolicy`].
#[derive(Deserialize)]
struct TableData {
    contexts: usize,
    positions: usize,
    vocab: usize,
    theta: Vec<f64>,
}

impl TryFrom<TableData> for TabularPolicy {
    type Error = GarError;

    fn try_from(d: TableData) -> Result<Self> {
        TabularPolicy::from_params(d.contexts, d.positions, d.vocab, d.theta)
    }
}

impl TabularPolicy {
    /// All-zero logits, i.e. the uniform policy.
    pub fn uniform(contexts: usize, positions: usize, vocab: usize) -> Result<Self> {
        if contexts == 0 || positions == 0 || vocab < 2 {
            return Err(GarError::Policy(format!(
                "bad table shape {contexts}x{positions}x{vocab}"
            )));
        }
        Ok(Self {
            contexts,
            positions,
            vocab,
            theta: vec![0.0; contexts * positions * vocab],
        })
    }

    pub fn from_params(contexts: usize, positions: usize, vocab: usize, theta: Vec<f64>) -> Result<Self> {
        let mut p = Self::uniform(contexts, positions, vocab)?;
        if theta.len() != p.theta.len() {
            return Err(GarError::Policy(format!(
                "expected {} parameters, got {}",
                p.theta.len(),
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(GarError::Policy("non-finite parameter".into()));
        }
        p.theta = theta;
        Ok(p)
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    fn offset(&self, context: usize, position: usize) -> usize {
        (context * self.positions + position) * self.vocab
    }

    pub fn row(&self, context: usize, position: usize) -> &[f64] {
        let o = self.offset(context, position);
        &self.theta[o..o + self.vocab]
    }

    pub fn row_mut(&mut self, context: usize, position: usize) -> &mut [f64] {
        let o = self.offset(context, position);
        &mut self.theta[o..o + self.vocab]
    }

    /// Sets the logits of every context's row at `position`.
    pub fn set_position_logits(&mut self, position: usize, logits: &[f64]) -> Result<()> {
        if position >= self.positions || logits.len() != self.vocab {
            return Err(GarError::Policy(format!(
                "row {position} of width {} does not fit the table",
                logits.len()
            )));
        }
        for c in 0..self.contexts {
            self.row_mut(c, position).copy_from_slice(logits);
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(GarError::Policy(format!(
                "expected {} parameters, got {}",
                self.theta.len(),
                theta.len()
            )));
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    /// Softmax of one row.
    pub fn probs(&self, context: usize, position: usize) -> Vec<f64> {
        softmax(self.row(context, position))
    }

    fn check(&self, prompt: Prompt, response: &[usize]) -> Result<()> {
        if prompt.context >= self.contexts {
            return Err(GarError::Policy(format!(
                "context {} outside 0..{}",
                prompt.context, self.contexts
            )));
        }
        if prompt.len > self.positions {
            return Err(GarError::Policy(format!(
                "response length {} exceeds maximum {}",
                prompt.len, self.positions
            )));
        }
        if response.len() != prompt.len {
            return Err(GarError::Policy(format!(
                "response has {} tokens, prompt expects {}",
                response.len(),
                prompt.len
            )));
        }
        if let Some(&t) = response.iter().find(|&&t| t >= self.vocab) {
            return Err(GarError::Policy(format!(
                "token {t} outside vocabulary of size {}",
                self.vocab
            )));
        }
        Ok(())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax_at(logits: &[f64], token: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    logits[token] - max - z.ln()
}

impl Policy for TabularPolicy {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn log_prob(&self, prompt: Prompt, response: &[usize]) -> Result<f64> {
        self.check(prompt, response)?;
        Ok(response
            .iter()
            .enumerate()
            .map(|(pos, &tok)| log_softmax_at(self.row(prompt.context, pos), tok))
            .sum())
    }

    fn grad_log_prob(&self, prompt: Prompt, response: &[usize]) -> Result<Vec<f64>> {
        self.check(prompt, response)?;
        let mut g = vec![0.0; self.theta.len()];
        for (pos, &tok) in response.iter().enumerate() {
            let o = self.offset(prompt.context, pos);
            for (k, p) in self.probs(prompt.context, pos).into_iter().enumerate() {
                g[o + k] = -p;
            }
            g[o + tok] += 1.0;
        }
        Ok(g)
    }

    fn sample(&self, prompt: Prompt, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        self.check(prompt, &vec![0; prompt.len])?;
        let rows: Vec<Vec<f64>> = (0..prompt.len).map(|pos| self.probs(prompt.context, pos)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| rows.iter().map(|row| draw(row, rng.random::<f64>())).collect())
            .collect())
    }
}

/// Inverse-CDF draw from a normalized distribution.
fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left `acc` a hair under 1: take the last token with mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Immutable, cheaply shareable copy of a policy's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot(Arc<TabularPolicy>);

impl PolicySnapshot {
    pub fn policy(&self) -> &TabularPolicy {
        &self.0
    }

    /// A fresh mutable handle starting from this snapshot.
    pub fn to_handle(&self) -> TabularPolicy {
        (*self.0).clone()
    }
}

impl Deref for PolicySnapshot {
    type Target = TabularPolicy;

    fn deref(&self) -> &TabularPolicy {
        &self.0
    }
}

impl Serialize for PolicySnapshot {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolicySnapshot {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        TabularPolicy::deserialize(d).map(|p| PolicySnapshot(Arc::new(p)))
    }
}

/// Deep copy of the live policy.
pub fn snapshot(policy: &TabularPolicy) -> PolicySnapshot {
    PolicySnapshot(Arc::new(policy.clone()))
}

impl Policy for PolicySnapshot {
    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }

    fn params(&self) -> &[f64] {
        self.0.params()
    }

    fn log_prob(&self, prompt: Prompt, response: &[usize]) -> Result<f64> {
        self.0.log_prob(prompt, response)
    }

    fn grad_log_prob(&self, prompt: Prompt, response: &[usize]) -> Result<Vec<f64>> {
        self.0.grad_log_prob(prompt, response)
    }

    fn sample(&self, prompt: Prompt, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        self.0.sample(prompt, count, seed)
    }
}
