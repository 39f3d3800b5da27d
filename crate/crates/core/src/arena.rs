//! Chain-evaluation arena: a small exactly-checkable stand-in for formal
//! statements and proofs.
//!
//! A statement asks for the value of `x0` pushed through a list of modular
//! `add`/`mul` operations and claims it equals `target`. A proof restates the
//! goal (`declared_target`) and lists every intermediate value. Restating a
//! different goal is a statement modification. The weakened goal keeps at
//! most the first half of the chain (shortened further if needed so its
//! value differs from the target), and a modified proof is checked against
//! that shorter chain.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GarError, Result};
use crate::policy::{Policy, Prompt, TabularPolicy};
use crate::seeds;
use crate::types::{Verdict, VerdictStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Op {
    Add(u32),
    Mul(u32),
}

impl Op {
    pub fn constant(self) -> u32 {
        match self {
            Op::Add(c) | Op::Mul(c) => c,
        }
    }

    pub fn apply(self, x: u32, modulus: u32) -> u32 {
        let (x, m) = (u64::from(x), u64::from(modulus));
        let y = match self {
            Op::Add(c) => x + u64::from(c),
            Op::Mul(c) => x * u64::from(c),
        };
        (y % m) as u32
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Add(c) => write!(f, "add:{c}"),
            Op::Mul(c) => write!(f, "mul:{c}"),
        }
    }
}

impl FromStr for Op {
    type Err = GarError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, c) = s
            .split_once(':')
            .ok_or_else(|| GarError::Parse(format!("operation `{s}` is not `name:constant`")))?;
        let c: u32 = c
            .trim()
            .parse()
            .map_err(|_| GarError::Parse(format!("bad constant in operation `{s}`")))?;
        match name.trim() {
            "add" => Ok(Op::Add(c)),
            "mul" => Ok(Op::Mul(c)),
            other => Err(GarError::Parse(format!("unknown operation `{other}`"))),
        }
    }
}

impl TryFrom<String> for Op {
    type Error = GarError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Op> for String {
    fn from(op: Op) -> String {
        op.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainStatement {
    pub modulus: u32,
    pub x0: u32,
    pub ops: Vec<Op>,
    pub target: u32,
}

impl ChainStatement {
    /// Values after each operation, starting from `x0`.
    pub fn trajectory(&self) -> Vec<u32> {
        let m = self.modulus.max(1);
        let mut x = self.x0 % m;
        self.ops
            .iter()
            .map(|op| {
                x = op.apply(x, m);
                x
            })
            .collect()
    }

    /// Result of evaluating the whole chain.
    pub fn true_value(&self) -> u32 {
        self.trajectory().last().copied().unwrap_or(self.x0)
    }

    /// Prefix length and value of the weakened goal: the longest prefix of
    /// at most `L / 2` operations whose value differs from `target`. `None`
    /// when every such prefix lands on the target.
    pub fn weakened_goal(&self) -> Option<(usize, u32)> {
        let truth = self.trajectory();
        (0..=self.ops.len() / 2)
            .rev()
            .map(|k| (k, if k == 0 { self.x0 } else { truth[k - 1] }))
            .find(|&(_, v)| v != self.target)
    }

    pub fn is_solvable(&self) -> bool {
        !self.ops.is_empty() && self.true_value() == self.target
    }

    pub fn difficulty(&self) -> usize {
        self.ops.len()
    }

    /// The statement a proof declaring `declared` restates: itself when the
    /// target is kept, otherwise the weakened prefix chain ending at `declared`.
    pub fn restated(&self, declared: u32) -> ChainStatement {
        if declared == self.target {
            return self.clone();
        }
        let keep = self.weakened_goal().map_or(self.ops.len(), |(k, _)| k);
        ChainStatement {
            modulus: self.modulus,
            x0: self.x0,
            ops: self.ops[..keep].to_vec(),
            target: declared,
        }
    }
}

pub fn difficulty(statement: &ChainStatement) -> usize {
    statement.difficulty()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainProof {
    pub declared_target: u32,
    pub values: Vec<u32>,
}

/// Checks a proof exactly. Unmodified proofs must reproduce the whole chain
/// and end at `target`; modified proofs must reproduce every step of the
/// weakened chain and declare its value (later values are not examined).
/// Escape tactics do not exist here.
pub fn verify(statement: &ChainStatement, proof: &ChainProof) -> Verdict {
    let l = statement.difficulty();
    if l == 0 || proof.values.len() != l {
        return Verdict::error();
    }
    let truth = statement.trajectory();
    let modified = proof.declared_target != statement.target;
    let passed = if modified {
        match statement.weakened_goal() {
            Some((k, v)) => proof.declared_target == v && proof.values[..k] == truth[..k],
            None => false,
        }
    } else {
        proof.values == truth && proof.values[l - 1] == proof.declared_target
    };
    Verdict {
        status: if passed {
            VerdictStatus::Pass
        } else {
            VerdictStatus::Fail
        },
        modified,
        used_escape_tactic: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    ConcatAb,
    ConcatBa,
    Interleave,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::ConcatAb, Pattern::ConcatBa, Pattern::Interleave];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TargetMode {
    TrueTarget,
    Perturbed { offset: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FusionAction {
    pub pattern: Pattern,
    /// How many times the composed operation list is repeated.
    pub rounds: u32,
    pub target_mode: TargetMode,
}

impl FusionAction {
    pub fn new(pattern: Pattern, target_mode: TargetMode) -> Self {
        Self {
            pattern,
            rounds: 1,
            target_mode,
        }
    }
}

/// Composes two parents into one statement starting from `parent_a.x0`.
pub fn fuse(a: &ChainStatement, b: &ChainStatement, action: FusionAction) -> Result<ChainStatement> {
    if a.modulus != b.modulus {
        return Err(invalid(format!(
            "cannot fuse statements over moduli {} and {}",
            a.modulus, b.modulus
        )));
    }
    if action.rounds == 0 {
        return Err(invalid("fusion needs at least one round"));
    }
    let m = a.modulus;
    let once: Vec<Op> = match action.pattern {
        Pattern::ConcatAb => a.ops.iter().chain(&b.ops).copied().collect(),
        Pattern::ConcatBa => b.ops.iter().chain(&a.ops).copied().collect(),
        Pattern::Interleave => {
            let mut out = Vec::with_capacity(a.ops.len() + b.ops.len());
            let longest = a.ops.len().max(b.ops.len());
            for i in 0..longest {
                out.extend(a.ops.get(i));
                out.extend(b.ops.get(i));
            }
            out
        }
    };
    let ops: Vec<Op> = (0..action.rounds).flat_map(|_| once.iter().copied()).collect();
    let mut fused = ChainStatement {
        modulus: m,
        x0: a.x0,
        ops,
        target: 0,
    };
    let truth = fused.true_value();
    fused.target = match action.target_mode {
        TargetMode::TrueTarget => truth,
        TargetMode::Perturbed { offset } => {
            if offset % m == 0 || offset >= m {
                return Err(invalid(format!("perturbation offset {offset} must lie in 1..{m}")));
            }
            (truth + offset) % m
        }
    };
    Ok(fused)
}

/// Grammar-only check: constants and target reduced, ops present, length
/// within bounds. Solvability is not examined.
pub fn compile_check(statement: &ChainStatement, max_difficulty: usize) -> bool {
    let m = statement.modulus;
    m >= 2
        && statement.x0 < m
        && statement.target < m
        && !statement.ops.is_empty()
        && statement.ops.len() <= max_difficulty
        && statement.ops.iter().all(|op| op.constant() < m)
}

/// How prover prompts are assigned to policy contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProverContext {
    /// Every statement uses the same context.
    #[default]
    Shared,
    /// One context per chain length.
    Length,
}

/// Maps statements to prover prompts and token sequences to proofs.
///
/// Token 0 is the goal: 0 keeps the target, 1 restates the weakened goal,
/// `j >= 2` misstates it as `target + j - 1`. Tokens `1..=L` are offsets
/// from the true step values, so 0 means "this step is right".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProverCodec {
    pub modulus: u32,
    pub max_difficulty: usize,
    pub context: ProverContext,
}

pub const GOAL_KEEP: usize = 0;
pub const GOAL_WEAKEN: usize = 1;

impl ProverCodec {
    pub fn vocab_size(&self) -> usize {
        (self.modulus as usize).max(2)
    }

    pub fn contexts(&self) -> usize {
        match self.context {
            ProverContext::Shared => 1,
            ProverContext::Length => self.max_difficulty,
        }
    }

    pub fn positions(&self) -> usize {
        self.max_difficulty + 1
    }

    pub fn prompt(&self, statement: &ChainStatement) -> Result<Prompt> {
        let l = statement.difficulty();
        if l == 0 || l > self.max_difficulty {
            return Err(invalid(format!("difficulty {l} outside 1..={}", self.max_difficulty)));
        }
        let context = match self.context {
            ProverContext::Shared => 0,
            ProverContext::Length => l - 1,
        };
        Ok(Prompt::new(context, l + 1))
    }

    pub fn decode(&self, statement: &ChainStatement, tokens: &[usize]) -> Result<ChainProof> {
        let l = statement.difficulty();
        if tokens.len() != l + 1 {
            return Err(invalid(format!(
                "proof of a length-{l} chain needs {} tokens, got {}",
                l + 1,
                tokens.len()
            )));
        }
        let m = u64::from(statement.modulus);
        let declared_target = match tokens[0] {
            GOAL_KEEP => statement.target,
            GOAL_WEAKEN => statement.weakened_goal().map_or(statement.target, |(_, v)| v),
            j => ((u64::from(statement.target) + j as u64 - 1) % m) as u32,
        };
        let values = statement
            .trajectory()
            .iter()
            .zip(&tokens[1..])
            .map(|(&v, &t)| ((u64::from(v) + t as u64) % m) as u32)
            .collect();
        Ok(ChainProof {
            declared_target,
            values,
        })
    }

    /// Base prover: mostly keeps the goal and mostly gets each step right.
    pub fn prior(&self) -> Result<TabularPolicy> {
        let v = self.vocab_size();
        let mut p = TabularPolicy::uniform(self.contexts(), self.positions(), v)?;
        let mut goal = vec![-4.0; v];
        goal[GOAL_KEEP] = 3.5;
        goal[GOAL_WEAKEN] = 0.0;
        p.set_position_logits(0, &goal)?;
        let mut step = vec![0.0; v];
        step[0] = 3.8;
        for pos in 1..self.positions() {
            p.set_position_logits(pos, &step)?;
        }
        Ok(p)
    }
}

/// Maps parent pairs to fuser prompts and token triples to fusion actions.
///
/// The context is the pair of parent lengths, each clipped to `buckets`.
/// The response is `[pattern, rounds - 1, target]` where target token 0 is
/// the true target and `k >= 1` perturbs it by `k`. Out-of-range tokens
/// decode to nothing (a malformed statement).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuserCodec {
    pub modulus: u32,
    pub max_rounds: u32,
    pub buckets: usize,
}

impl FuserCodec {
    pub const RESPONSE_LEN: usize = 3;

    pub fn vocab_size(&self) -> usize {
        (self.modulus as usize).max(3).max(self.max_rounds as usize)
    }

    pub fn contexts(&self) -> usize {
        self.buckets * self.buckets
    }

    pub fn prompt(&self, a: &ChainStatement, b: &ChainStatement) -> Prompt {
        let bucket = |l: usize| l.clamp(1, self.buckets) - 1;
        Prompt::new(
            bucket(a.difficulty()) * self.buckets + bucket(b.difficulty()),
            Self::RESPONSE_LEN,
        )
    }

    pub fn decode(&self, tokens: &[usize]) -> Option<FusionAction> {
        let [p, r, t] = tokens else {
            return None;
        };
        let pattern = *Pattern::ALL.get(*p)?;
        if *r >= self.max_rounds as usize {
            return None;
        }
        let target_mode = match *t {
            0 => TargetMode::TrueTarget,
            k if k < self.modulus as usize => TargetMode::Perturbed { offset: k as u32 },
            _ => return None,
        };
        Some(FusionAction {
            pattern,
            rounds: *r as u32 + 1,
            target_mode,
        })
    }

    /// Base fuser: any valid pattern, prefers few rounds and true targets.
    pub fn prior(&self) -> Result<TabularPolicy> {
        let v = self.vocab_size();
        let mut p = TabularPolicy::uniform(self.contexts(), Self::RESPONSE_LEN, v)?;
        let mut pattern = vec![0.0; v];
        pattern[..3].fill(3.0);
        p.set_position_logits(0, &pattern)?;
        let mut rounds = vec![0.0; v];
        for (slot, logit) in rounds.iter_mut().zip([3.0, 2.0, 1.0, 0.5]) {
            *slot = logit;
        }
        p.set_position_logits(1, &rounds)?;
        let mut target = vec![0.0; v];
        target[0] = 4.0;
        p.set_position_logits(2, &target)?;
        Ok(p)
    }
}

/// Exact probability that a proof sampled from `policy` is a clean pass,
/// by enumerating every token sequence. Fails if `V^(L+1)` exceeds `budget`.
pub fn exact_pass_probability(
    policy: &dyn Policy,
    codec: &ProverCodec,
    statement: &ChainStatement,
    budget: u128,
) -> Result<f64> {
    let prompt = codec.prompt(statement)?;
    let v = policy.vocab_size();
    let needed = (v as u128).checked_pow(prompt.len as u32).unwrap_or(u128::MAX);
    if needed > budget {
        return Err(GarError::BudgetExceeded { needed, budget });
    }
    let mut tokens = vec![0usize; prompt.len];
    let mut total = 0.0;
    loop {
        let proof = codec.decode(statement, &tokens)?;
        if verify(statement, &proof).is_clean_pass() {
            total += policy.log_prob(prompt, &tokens)?.exp();
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == tokens.len() {
                return Ok(total.min(1.0));
            }
            tokens[i] += 1;
            if tokens[i] < v {
                break;
            }
            tokens[i] = 0;
            i += 1;
        }
    }
}

fn ident(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if !s.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') {
        s.insert(0, 's');
    }
    s
}

fn render_ops(ops: &[Op]) -> String {
    ops.iter()
        .map(|op| match op {
            Op::Add(c) => format!("add {c}"),
            Op::Mul(c) => format!("mul {c}"),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Formal statement text, e.g. `theorem t1 : chain 7 2 [add 3, mul 2] = 3`.
pub fn render_formal(name: &str, statement: &ChainStatement) -> String {
    format!(
        "theorem {} : chain {} {} [{}] = {}",
        ident(name),
        statement.modulus,
        statement.x0,
        render_ops(&statement.ops),
        statement.target
    )
}

pub fn render_informal(statement: &ChainStatement) -> String {
    let steps: Vec<String> = statement
        .ops
        .iter()
        .map(|op| match op {
            Op::Add(c) => format!("add {c}"),
            Op::Mul(c) => format!("multiply by {c}"),
        })
        .collect();
    format!(
        "Working modulo {}, start from {} and {}. Show that the result is {}.",
        statement.modulus,
        statement.x0,
        steps.join(", then "),
        statement.target
    )
}

/// Proof text: the restated theorem header followed by the step values. A
/// modified proof restates the weakened statement.
pub fn render_proof(name: &str, statement: &ChainStatement, proof: &ChainProof) -> String {
    let header = if proof.declared_target == statement.target {
        render_formal(name, statement)
    } else {
        render_formal(name, &statement.restated(proof.declared_target))
    };
    let values: Vec<String> = proof.values.iter().map(u32::to_string).collect();
    format!("{header} := by\n  steps [{}]", values.join(", "))
}

fn parse_err(what: &str, text: &str) -> GarError {
    GarError::Parse(format!("{what} in `{text}`"))
}

/// Parses the output of [`render_formal`] (anything after `:=` is ignored).
pub fn parse_formal(text: &str) -> Result<(String, ChainStatement)> {
    let head = text.split(":=").next().unwrap_or(text).trim();
    let rest = head
        .strip_prefix("theorem")
        .ok_or_else(|| parse_err("missing `theorem`", text))?;
    let (name, body) = rest.split_once(':').ok_or_else(|| parse_err("missing `:`", text))?;
    let body = body
        .trim()
        .strip_prefix("chain")
        .ok_or_else(|| parse_err("missing `chain`", text))?;
    let open = body.find('[').ok_or_else(|| parse_err("missing `[`", text))?;
    let close = body.rfind(']').ok_or_else(|| parse_err("missing `]`", text))?;
    if close < open {
        return Err(parse_err("unbalanced brackets", text));
    }
    let nums: Vec<u32> = body[..open]
        .split_whitespace()
        .map(|w| w.parse().map_err(|_| parse_err("bad number", text)))
        .collect::<Result<_>>()?;
    let [modulus, x0] = nums[..] else {
        return Err(parse_err("expected modulus and start value", text));
    };
    let ops = body[open + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.replacen(' ', ":", 1).parse::<Op>())
        .collect::<Result<Vec<_>>>()?;
    let target = body[close + 1..]
        .trim()
        .strip_prefix('=')
        .ok_or_else(|| parse_err("missing `=`", text))?
        .trim()
        .parse()
        .map_err(|_| parse_err("bad target", text))?;
    Ok((
        name.trim().to_string(),
        ChainStatement {
            modulus,
            x0,
            ops,
            target,
        },
    ))
}

/// A proof body split into its restated header and step values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedProof {
    pub name: String,
    pub header: ChainStatement,
    pub values: Vec<u32>,
}

pub fn parse_proof(text: &str) -> Result<ParsedProof> {
    let (name, header) = parse_formal(text)?;
    let tail = text
        .split_once(":=")
        .map(|(_, t)| t)
        .ok_or_else(|| parse_err("missing `:=`", text))?;
    let open = tail.find("steps [").ok_or_else(|| parse_err("missing `steps`", text))? + "steps [".len();
    let close = tail[open..]
        .find(']')
        .ok_or_else(|| parse_err("unterminated steps", text))?
        + open;
    let values = tail[open..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| parse_err("bad step value", text)))
        .collect::<Result<_>>()?;
    Ok(ParsedProof { name, header, values })
}

/// One line of a statement repository file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepositoryRecord {
    pub id: String,
    pub modulus: u32,
    pub x0: u32,
    pub ops: Vec<Op>,
    pub target: u32,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl RepositoryRecord {
    pub fn statement(&self) -> ChainStatement {
        ChainStatement {
            modulus: self.modulus,
            x0: self.x0,
            ops: self.ops.clone(),
            target: self.target,
        }
    }
}

/// Parses line-delimited records; blank lines are skipped.
pub fn parse_repository(text: &str) -> Result<Vec<RepositoryRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RepositoryRecord =
            serde_json::from_str(line).map_err(|e| GarError::Parse(format!("repository line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    let mut seen = std::collections::HashSet::new();
    for r in &out {
        if !seen.insert(r.id.as_str()) {
            return Err(GarError::Parse(format!("duplicate statement id `{}`", r.id)));
        }
    }
    Ok(out)
}

pub fn load_repository(path: &Path) -> Result<Vec<RepositoryRecord>> {
    parse_repository(&std::fs::read_to_string(path)?)
}

pub fn render_repository(records: &[RepositoryRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// `count` solvable statements with lengths drawn from `lengths`.
pub fn random_repository(
    count: usize,
    modulus: u32,
    lengths: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Result<Vec<RepositoryRecord>> {
    if modulus < 2 || lengths.is_empty() || *lengths.start() == 0 {
        return Err(invalid("random repository needs modulus >= 2 and positive lengths"));
    }
    let mut rng = seeds::stream(seed, "repository", &[]);
    Ok((0..count)
        .map(|i| {
            let l = rng.random_range(lengths.clone());
            let ops: Vec<Op> = (0..l)
                .map(|_| {
                    let c = rng.random_range(0..modulus);
                    if rng.random_bool(0.5) {
                        Op::Add(c)
                    } else {
                        Op::Mul(c)
                    }
                })
                .collect();
            let mut s = ChainStatement {
                modulus,
                x0: rng.random_range(0..modulus),
                ops,
                target: 0,
            };
            s.target = s.true_value();
            RepositoryRecord {
                id: format!("base_{i:03}"),
                modulus,
                x0: s.x0,
                ops: s.ops,
                target: s.target,
                tags: vec![format!("len{l}")],
            }
        })
        .collect())
}
