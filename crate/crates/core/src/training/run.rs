//! One outer iteration of adversarial co-training, as a pure function from
//! run state to run state.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arena::{self, ChainProof, ChainStatement, FusionAction, ProverCodec};
use crate::error::{invalid, GarError, Result};
use crate::grpo::{optimize, GrpoSample, RatioDenominator, Role};
use crate::policy::{snapshot, Policy, PolicySnapshot, Prompt, TabularPolicy};
use crate::rewards::{group_advantages, in_training_band, FuserRewardInput, ProverRewardInput};
use crate::seeds;
use crate::types::{group_from_attempts, IterationRecord, ProofAttempt, RolloutGroup, Statement, StatementId};
use crate::verifier::{CheckRequest, ProofChecker};

use super::config::RunConfig;
use super::metrics::{average_proof_correctness, pass_at_x, statement_modification_metric};

/// A repository statement in both its generic and arena forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoEntry {
    pub statement: Statement,
    pub chain: ChainStatement,
}

/// Loads (or generates) the base repository and compile-checks it.
pub fn build_repository(config: &RunConfig) -> Result<Vec<RepoEntry>> {
    let records = match &config.repository {
        Some(path) => arena::load_repository(path).map_err(|e| match e {
            GarError::Io(io) => GarError::Io(std::io::Error::new(
                io.kind(),
                format!("repository `{}`: {io}", path.display()),
            )),
            other => other,
        })?,
        None => arena::random_repository(
            config.repository_size,
            config.modulus,
            config.base_min_len..=config.base_max_len,
            seeds::derive_seed(config.seed, "repository", &[]),
        )?,
    };
    if records.len() < 2 {
        return Err(GarError::Config {
            key: "repository".into(),
            reason: format!("needs at least 2 statements, found {}", records.len()),
        });
    }
    records
        .iter()
        .map(|r| {
            let chain = r.statement();
            if chain.modulus != config.modulus || !arena::compile_check(&chain, config.max_difficulty) {
                return Err(GarError::Config {
                    key: "repository".into(),
                    reason: format!(
                        "statement `{}` is not a well-formed modulus-{} chain",
                        r.id, config.modulus
                    ),
                });
            }
            let statement = Statement::base(
                StatementId::new(&r.id),
                arena::render_informal(&chain),
                arena::render_formal(&r.id, &chain),
            )
            .mark_compiled(true);
            Ok(RepoEntry { statement, chain })
        })
        .collect()
}

/// `count` ordered pairs of distinct repository indices, each pair drawn
/// uniformly and independently.
pub fn sample_base_pairs<T, R: Rng>(repository: &[T], count: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let len = repository.len();
    if len < 2 {
        return Err(invalid(format!(
            "pair sampling needs at least 2 statements, found {len}"
        )));
    }
    Ok((0..count)
        .map(|_| {
            let a = rng.random_range(0..len);
            let mut b = rng.random_range(0..len - 1);
            if b >= a {
                b += 1;
            }
            (a, b)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    /// Completed iterations.
    pub iteration: u32,
    pub seed: u64,
    pub fuser: TabularPolicy,
    pub prover: TabularPolicy,
    pub fuser_ref: PolicySnapshot,
    pub prover_ref: PolicySnapshot,
    pub records: Vec<IterationRecord>,
    pub repository: Vec<RepoEntry>,
}

impl RunState {
    pub fn initial(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let fuser = config.fuser_codec().prior()?;
        let prover = config.prover_codec().prior()?;
        Ok(Self {
            iteration: 0,
            seed: config.seed,
            fuser_ref: snapshot(&fuser),
            prover_ref: snapshot(&prover),
            fuser,
            prover,
            records: Vec::new(),
            repository: build_repository(config)?,
        })
    }
}

/// Per-statement detail of one iteration, for the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementDump {
    pub id: StatementId,
    pub parent_a: StatementId,
    pub parent_b: StatementId,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub action: Option<FusionAction>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub difficulty: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub solvable: Option<bool>,
    pub compile_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pass_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub modification_rate: Option<f64>,
    pub fuser_reward: f64,
    pub fuser_advantage: f64,
    /// Whether the statement's group entered the prover update.
    pub prover_batch: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutput {
    pub record: IterationRecord,
    pub statements: Vec<StatementDump>,
    /// Rollout groups of the compiled statements.
    pub groups: Vec<RolloutGroup>,
}

struct Rollout {
    tokens: Vec<Vec<usize>>,
    proofs: Vec<ChainProof>,
    texts: Vec<String>,
}

fn roll_out(
    policy: &dyn Policy,
    codec: &ProverCodec,
    name: &str,
    chain: &ChainStatement,
    count: usize,
    seed: u64,
) -> Result<Rollout> {
    let prompt = codec.prompt(chain)?;
    let tokens = policy.sample(prompt, count, seed)?;
    let proofs = tokens
        .iter()
        .map(|t| codec.decode(chain, t))
        .collect::<Result<Vec<_>>>()?;
    let texts = proofs.iter().map(|p| arena::render_proof(name, chain, p)).collect();
    Ok(Rollout { tokens, proofs, texts })
}

/// Token sequences of one statement's sampled proofs.
pub(crate) type SampledTokens = Vec<Vec<usize>>;

/// Samples `count` proofs per statement, checks them all in one batch and
/// groups the verdicts per statement.
pub(crate) fn sample_and_check(
    policy: &dyn Policy,
    codec: &ProverCodec,
    entries: &[(&Statement, &ChainStatement)],
    count: usize,
    seed_for: impl Fn(usize) -> u64 + Sync,
    tag: &str,
    checker: &dyn ProofChecker,
) -> Result<(Vec<RolloutGroup>, Vec<SampledTokens>)> {
    let rollouts = entries
        .par_iter()
        .enumerate()
        .map(|(i, (s, chain))| roll_out(policy, codec, s.id.as_str(), chain, count, seed_for(i)))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<Vec<String>> = entries
        .iter()
        .map(|(s, _)| (0..count).map(|k| format!("{}#{tag}{k}", s.id)).collect())
        .collect();
    let mut requests = Vec::with_capacity(entries.len() * count);
    for (((s, chain), ids), r) in entries.iter().zip(&ids).zip(&rollouts) {
        for ((id, proof), text) in ids.iter().zip(&r.proofs).zip(&r.texts) {
            requests.push(CheckRequest {
                job_id: id,
                statement: chain,
                formal: &s.formal_text,
                proof,
                proof_text: text,
            });
        }
    }
    let verdicts = checker.check_batch(&requests)?;
    if verdicts.len() != requests.len() {
        return Err(invalid(format!(
            "checker returned {} verdicts for {} proofs",
            verdicts.len(),
            requests.len()
        )));
    }
    let mut verdicts = verdicts.into_iter();
    let mut groups = Vec::with_capacity(entries.len());
    let mut tokens = Vec::with_capacity(entries.len());
    for ((s, _), r) in entries.iter().zip(rollouts) {
        let attempts = r
            .texts
            .into_iter()
            .map(|body| ProofAttempt {
                statement_id: s.id.clone(),
                body,
                verdict: verdicts.next().expect("length checked above"),
            })
            .collect();
        groups.push(group_from_attempts((*s).clone(), attempts)?);
        tokens.push(r.tokens);
    }
    Ok((groups, tokens))
}

fn metric_or_zero(groups: &[RolloutGroup], f: impl Fn(&[RolloutGroup]) -> Result<f64>) -> Result<f64> {
    if groups.is_empty() {
        Ok(0.0)
    } else {
        f(groups)
    }
}

/// Runs one iteration. On error the input state is untouched.
pub fn run_iteration(
    state: &RunState,
    config: &RunConfig,
    checker: &dyn ProofChecker,
) -> Result<(RunState, IterationOutput)> {
    let iteration = state.iteration + 1;
    let it = u64::from(iteration);
    let master = state.seed;
    let n_total = config.statements_per_iteration;
    let n = config.proofs_per_statement;
    let fuser_codec = config.fuser_codec();
    let prover_codec = config.prover_codec();
    let rules = config.reward_rules();

    // pair sampling and fusion
    let mut pair_rng = seeds::stream(master, "pairs", &[it]);
    let pairs = sample_base_pairs(&state.repository, n_total, &mut pair_rng)?;
    let mut prompts: Vec<Prompt> = Vec::with_capacity(n_total);
    let mut actions_tokens = Vec::with_capacity(n_total);
    for (j, &(a, b)) in pairs.iter().enumerate() {
        let prompt = fuser_codec.prompt(&state.repository[a].chain, &state.repository[b].chain);
        let seed = seeds::derive_seed(master, "fusion", &[it, j as u64]);
        let tokens = state.fuser.sample(prompt, 1, seed)?.remove(0);
        prompts.push(prompt);
        actions_tokens.push(tokens);
    }

    let mut fused: Vec<(Statement, Option<FusionAction>, Option<ChainStatement>)> = Vec::with_capacity(n_total);
    for (j, &(a, b)) in pairs.iter().enumerate() {
        let (pa, pb) = (&state.repository[a], &state.repository[b]);
        let id = StatementId::new(format!("it{iteration}_{j:04}"));
        let action = fuser_codec.decode(&actions_tokens[j]);
        let chain = match action {
            Some(act) => Some(arena::fuse(&pa.chain, &pb.chain, act)?),
            None => None,
        };
        let statement = match &chain {
            Some(c) => Statement::fused(
                id.clone(),
                &pa.statement,
                &pb.statement,
                arena::render_informal(c),
                arena::render_formal(id.as_str(), c),
                iteration,
            )?
            .mark_compiled(arena::compile_check(c, config.max_difficulty)),
            None => Statement::fused(id, &pa.statement, &pb.statement, "", "", iteration)?,
        };
        fused.push((statement, action, chain));
    }

    // rollouts and verification for compiled statements
    let compiled: Vec<usize> = (0..n_total).filter(|&j| fused[j].0.compile_ok).collect();
    let entries: Vec<(&Statement, &ChainStatement)> = compiled
        .iter()
        .map(|&j| {
            (
                &fused[j].0,
                fused[j].2.as_ref().expect("compiled statements have a chain"),
            )
        })
        .collect();
    let slot = |i: usize| compiled[i] as u64;
    let (groups, rollout_tokens) = sample_and_check(
        &state.prover,
        &prover_codec,
        &entries,
        n,
        |i| seeds::derive_seed(master, "rollout", &[it, slot(i)]),
        "",
        checker,
    )?;
    let (base_groups, _) = sample_and_check(
        &*state.prover_ref,
        &prover_codec,
        &entries,
        n,
        |i| seeds::derive_seed(master, "base-rollout", &[it, slot(i)]),
        "base",
        checker,
    )?;

    // fuser rewards over all N samples, one advantage group
    let mut fuser_rewards = vec![0.0; n_total];
    for (g, &j) in groups.iter().zip(&compiled) {
        fuser_rewards[j] = rules.fuser_reward(FuserRewardInput {
            pass_rate: g.pass_rate,
            modification_rate: g.modification_rate,
            compile_ok: true,
        })?;
    }
    let fuser_adv = group_advantages(&fuser_rewards)?.advantages;
    let fuser_hp = config.fuser_hyperparams();
    let fuser_samples = prompts
        .iter()
        .zip(actions_tokens)
        .zip(&fuser_adv)
        .map(|((&prompt, tokens), &adv)| {
            GrpoSample::score(
                prompt,
                tokens,
                adv,
                &state.fuser,
                &*state.fuser_ref,
                RatioDenominator::Old,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut fuser = state.fuser.clone();
    let fuser_update = optimize(Role::Fuser, &mut fuser, &fuser_samples, &fuser_hp)?;

    // prover update on the hard-but-solvable band
    let prover_hp = config.prover_hyperparams();
    let mut prover_samples = Vec::new();
    let mut in_batch = vec![false; groups.len()];
    for (gi, g) in groups.iter().enumerate() {
        if !in_training_band(g.pass_rate) {
            continue;
        }
        in_batch[gi] = true;
        let rewards: Vec<f64> = g
            .attempts
            .iter()
            .map(|a| {
                rules.prover_reward(ProverRewardInput {
                    passed: a.verdict.is_verified(),
                    modified: a.verdict.modified,
                })
            })
            .collect();
        let adv = group_advantages(&rewards)?.advantages;
        let prompt = prover_codec.prompt(entries[gi].1)?;
        for (tokens, a) in rollout_tokens[gi].iter().zip(adv) {
            prover_samples.push(GrpoSample::score(
                prompt,
                tokens.clone(),
                a,
                &state.prover,
                &*state.prover_ref,
                prover_hp.ratio_denominator,
            )?);
        }
    }
    let mut prover = state.prover.clone();
    let prover_objective = if prover_samples.is_empty() {
        0.0
    } else {
        optimize(Role::Prover, &mut prover, &prover_samples, &prover_hp)?.objective_before
    };

    let (updated_groups, _) = sample_and_check(
        &prover,
        &prover_codec,
        &entries,
        n,
        |i| seeds::derive_seed(master, "updated-rollout", &[it, slot(i)]),
        "updated",
        checker,
    )?;

    let filtered = in_batch.iter().filter(|&&b| b).count();
    let mean_difficulty = if entries.is_empty() {
        0.0
    } else {
        entries.iter().map(|(_, c)| c.difficulty() as f64).sum::<f64>() / entries.len() as f64
    };
    let record = IterationRecord {
        iteration,
        generated_count: n_total,
        compile_pass_count: compiled.len(),
        filtered_for_prover_count: filtered,
        pass_at_x: metric_or_zero(&groups, |g| pass_at_x(g, config.pass_at_x))?,
        x: config.pass_at_x,
        avg_correctness: metric_or_zero(&groups, average_proof_correctness)?,
        modification_rate: metric_or_zero(&groups, statement_modification_metric)?,
        mean_difficulty,
        base_policy_avg_correctness: metric_or_zero(&base_groups, average_proof_correctness)?,
        updated_prover_avg_correctness: metric_or_zero(&updated_groups, average_proof_correctness)?,
        fuser_mean_reward: fuser_rewards.iter().sum::<f64>() / n_total as f64,
        fuser_objective: fuser_update.objective_before,
        prover_objective,
        wall_time_secs: 0.0,
    };

    let mut group_of = vec![None; n_total];
    for (gi, &j) in compiled.iter().enumerate() {
        group_of[j] = Some(gi);
    }
    let statements = fused
        .iter()
        .enumerate()
        .map(|(j, (s, action, chain))| {
            let (pa, pb) = pairs[j];
            let g = group_of[j].map(|gi| &groups[gi]);
            StatementDump {
                id: s.id.clone(),
                parent_a: state.repository[pa].statement.id.clone(),
                parent_b: state.repository[pb].statement.id.clone(),
                action: *action,
                difficulty: chain.as_ref().map(ChainStatement::difficulty),
                solvable: chain.as_ref().map(ChainStatement::is_solvable),
                compile_ok: s.compile_ok,
                pass_rate: g.map(|g| g.pass_rate),
                modification_rate: g.map(|g| g.modification_rate),
                fuser_reward: fuser_rewards[j],
                fuser_advantage: fuser_adv[j],
                prover_batch: group_of[j].is_some_and(|gi| in_batch[gi]),
            }
        })
        .collect();

    let mut repository = state.repository.clone();
    if config.accumulate_fused {
        for (s, _, chain) in &fused {
            if let (true, Some(c)) = (s.compile_ok, chain) {
                repository.push(RepoEntry {
                    statement: s.clone(),
                    chain: c.clone(),
                });
            }
        }
    }
    let mut records = state.records.clone();
    records.push(record.clone());
    let next = RunState {
        iteration,
        seed: master,
        fuser,
        prover,
        fuser_ref: state.fuser_ref.clone(),
        prover_ref: state.prover_ref.clone(),
        records,
        repository,
    };
    Ok((
        next,
        IterationOutput {
            record,
            statements,
            groups,
        },
    ))
}
