//! Rule-based rewards, group-relative advantages and the prover training band.
//!
//! Fuser reward: `(1 - p) * (1 - m) * [p != 0]`, zero for statements that do
//! not compile. Prover reward: `1 - 0.5 * m` for a verified proof, zero
//! otherwise. Advantages are z-scores within a group using the population
//! standard deviation; a constant group yields all-zero advantages.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::types::RolloutGroup;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuserRewardInput {
    pub pass_rate: f64,
    pub modification_rate: f64,
    pub compile_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProverRewardInput {
    pub passed: bool,
    pub modified: bool,
}

/// Reward rules shared by both roles. `modification_penalty = false` drops
/// the `(1 - m)` factor and the `0.5 * m` term (the penalty ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardRules {
    pub modification_penalty: bool,
}

impl Default for RewardRules {
    fn default() -> Self {
        Self {
            modification_penalty: true,
        }
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

impl RewardRules {
    pub fn fuser_reward(&self, input: FuserRewardInput) -> Result<f64> {
        check_unit("pass rate", input.pass_rate)?;
        check_unit("modification rate", input.modification_rate)?;
        if !input.compile_ok || input.pass_rate == 0.0 {
            return Ok(0.0);
        }
        let keep = if self.modification_penalty {
            1.0 - input.modification_rate
        } else {
            1.0
        };
        Ok((1.0 - input.pass_rate) * keep)
    }

    pub fn prover_reward(&self, input: ProverRewardInput) -> f64 {
        if !input.passed {
            return 0.0;
        }
        if self.modification_penalty && input.modified {
            0.5
        } else {
            1.0
        }
    }
}

/// Fuser reward with the modification penalty enabled.
pub fn fuser_reward(input: FuserRewardInput) -> Result<f64> {
    RewardRules::default().fuser_reward(input)
}

/// Prover reward with the modification penalty enabled.
pub fn prover_reward(input: ProverRewardInput) -> f64 {
    RewardRules::default().prover_reward(input)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGroup {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Standardizes rewards within a group: `(r - mean) / std`.
pub fn group_advantages(rewards: &[f64]) -> Result<AdvantageGroup> {
    if rewards.len() < 2 {
        return Err(invalid(format!(
            "advantage groups need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(invalid(format!("non-finite reward {bad}")));
    }
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        return Ok(AdvantageGroup {
            rewards: rewards.to_vec(),
            advantages: vec![0.0; rewards.len()],
        });
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(AdvantageGroup {
        rewards: rewards.to_vec(),
        advantages: rewards.iter().map(|r| (r - mean) / std).collect(),
    })
}

/// True for pass rates inside the prover training band `0 < p <= 0.5`.
pub fn in_training_band(pass_rate: f64) -> bool {
    pass_rate > 0.0 && pass_rate <= 0.5
}

/// Keeps the hard-but-solvable groups, in order.
pub fn filter_for_prover_training(groups: Vec<RolloutGroup>) -> Vec<RolloutGroup> {
    groups.into_iter().filter(|g| in_training_band(g.pass_rate)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{group_from_attempts, ProofAttempt, Statement, StatementId, Verdict, VerdictStatus};

    fn fr(p: f64, m: f64) -> f64 {
        fuser_reward(FuserRewardInput {
            pass_rate: p,
            modification_rate: m,
            compile_ok: true,
        })
        .unwrap()
    }

    #[test]
    fn fuser_reward_examples() {
        assert_eq!(fr(0.0, 0.0), 0.0);
        assert_eq!(fr(0.25, 0.5), 0.375);
        assert_eq!(fr(1.0, 0.0), 0.0);
    }

    #[test]
    fn fuser_reward_zero_when_not_compiled() {
        let r = fuser_reward(FuserRewardInput {
            pass_rate: 0.25,
            modification_rate: 0.0,
            compile_ok: false,
        })
        .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn fuser_reward_rejects_out_of_range() {
        for (p, m) in [(-0.1, 0.0), (1.1, 0.0), (0.5, -0.01), (0.5, 2.0), (f64::NAN, 0.0)] {
            let r = fuser_reward(FuserRewardInput {
                pass_rate: p,
                modification_rate: m,
                compile_ok: true,
            });
            assert!(r.is_err(), "({p}, {m}) accepted");
        }
    }

    #[test]
    fn fuser_reward_without_penalty_ignores_m() {
        let rules = RewardRules {
            modification_penalty: false,
        };
        let r = rules
            .fuser_reward(FuserRewardInput {
                pass_rate: 0.25,
                modification_rate: 0.5,
                compile_ok: true,
            })
            .unwrap();
        assert_eq!(r, 0.75);
    }

    #[test]
    fn prover_reward_examples() {
        let pr = |passed, modified| prover_reward(ProverRewardInput { passed, modified });
        assert_eq!(pr(true, false), 1.0);
        assert_eq!(pr(true, true), 0.5);
        assert_eq!(pr(false, false), 0.0);
        assert_eq!(pr(false, true), 0.0);
        let off = RewardRules {
            modification_penalty: false,
        };
        assert_eq!(
            off.prover_reward(ProverRewardInput {
                passed: true,
                modified: true
            }),
            1.0
        );
    }

    #[test]
    fn advantages_of_two() {
        let g = group_advantages(&[1.0, 0.0]).unwrap();
        assert_eq!(g.advantages, vec![1.0, -1.0]);
    }

    #[test]
    fn constant_group_has_zero_advantages() {
        for c in [0.0, 0.3, 1.0, -7.5] {
            let g = group_advantages(&[c; 4]).unwrap();
            assert_eq!(g.advantages, vec![0.0; 4]);
        }
    }

    #[test]
    fn short_groups_rejected() {
        assert!(group_advantages(&[]).is_err());
        assert!(group_advantages(&[1.0]).is_err());
    }

    fn group_with_rate(id: &str, passes: usize, n: usize) -> RolloutGroup {
        let s = Statement::base(StatementId::new(id), "", "x");
        let atts = (0..n)
            .map(|k| ProofAttempt {
                statement_id: s.id.clone(),
                body: String::new(),
                verdict: Verdict::new(if k < passes {
                    VerdictStatus::Pass
                } else {
                    VerdictStatus::Fail
                }),
            })
            .collect();
        group_from_attempts(s, atts).unwrap()
    }

    #[test]
    fn band_filter_boundaries() {
        let groups = vec![
            group_with_rate("zero", 0, 10),
            group_with_rate("six", 6, 10),
            group_with_rate("half", 5, 10),
            group_with_rate("tenth", 1, 10),
            group_with_rate("all", 10, 10),
        ];
        let kept: Vec<_> = filter_for_prover_training(groups)
            .into_iter()
            .map(|g| g.statement.id.0)
            .collect();
        assert_eq!(kept, vec!["half", "tenth"]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fuser_reward_in_unit_interval(p in 0.0f64..=1.0, m in 0.0f64..=1.0) {
                let r = fr(p, m);
                prop_assert!((0.0..=1.0).contains(&r));
            }

            #[test]
            fn fuser_reward_monotone(p in 0.001f64..=1.0, dp in 0.0f64..0.5, m in 0.0f64..=1.0, dm in 0.0f64..0.5) {
                let p2 = (p + dp).min(1.0);
                let m2 = (m + dm).min(1.0);
                prop_assert!(fr(p2, m) <= fr(p, m));
                prop_assert!(fr(p, m2) <= fr(p, m));
            }

            #[test]
            fn advantages_shift_and_scale_invariant(
                rewards in prop::collection::vec(-5.0f64..5.0, 2..32),
                shift in -10.0f64..10.0,
                scale in 0.1f64..10.0,
            ) {
                let base = group_advantages(&rewards).unwrap().advantages;
                let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
                let scaled: Vec<f64> = rewards.iter().map(|r| r * scale).collect();
                let a_shift = group_advantages(&shifted).unwrap().advantages;
                let a_scale = group_advantages(&scaled).unwrap().advantages;
                for i in 0..rewards.len() {
                    prop_assert!((base[i] - a_scale[i]).abs() < 1e-9);
                    // shifting can merge near-equal values only when the spread is tiny
                    if base.iter().any(|a| *a != 0.0) && a_shift.iter().any(|a| *a != 0.0) {
                        prop_assert!((base[i] - a_shift[i]).abs() < 1e-6);
                    }
                }
            }

            #[test]
            fn advantages_standardized(rewards in prop::collection::vec(0.0f64..1.0, 2..64)) {
                let a = group_advantages(&rewards).unwrap().advantages;
                if a.iter().any(|x| *x != 0.0) {
                    let n = a.len() as f64;
                    let mean = a.iter().sum::<f64>() / n;
                    let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    prop_assert!(mean.abs() < 1e-9);
                    prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
                }
            }

            #[test]
            fn filter_output_is_ordered_band_subset(passes in prop::collection::vec(0usize..=16, 0..40)) {
                let groups: Vec<_> = passes
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| group_with_rate(&format!("g{i}"), k, 16))
                    .collect();
                let ids: Vec<String> = groups.iter().map(|g| g.statement.id.0.clone()).collect();
                let kept = filter_for_prover_training(groups);
                let mut cursor = 0;
                for g in &kept {
                    prop_assert!(g.pass_rate > 0.0 && g.pass_rate <= 0.5);
                    let pos = ids[cursor..].iter().position(|id| *id == g.statement.id.0);
                    prop_assert!(pos.is_some());
                    cursor += pos.unwrap() + 1;
                }
                let expected = passes.iter().filter(|&&k| k > 0 && k <= 8).count();
                prop_assert_eq!(kept.len(), expected);
            }
        }
    }
}
