//! Evaluation metrics over rollout groups.

use crate::error::{invalid, Result};
use crate::types::RolloutGroup;

/// Fraction of statements whose first `x` attempts include a clean pass.
pub fn pass_at_x(groups: &[RolloutGroup], x: usize) -> Result<f64> {
    if groups.is_empty() {
        return Err(invalid("pass@x over no statements"));
    }
    if x == 0 {
        return Err(invalid("pass@x needs x >= 1"));
    }
    if let Some(g) = groups.iter().find(|g| g.n() < x) {
        return Err(invalid(format!(
            "pass@{x} needs {x} attempts, statement `{}` has {}",
            g.statement.id,
            g.n()
        )));
    }
    let hits = groups
        .iter()
        .filter(|g| g.attempts[..x].iter().any(|a| a.verdict.is_clean_pass()))
        .count();
    Ok(hits as f64 / groups.len() as f64)
}

/// Total clean passes over total attempts.
pub fn average_proof_correctness(groups: &[RolloutGroup]) -> Result<f64> {
    if groups.is_empty() {
        return Err(invalid("average correctness over no statements"));
    }
    let passes: usize = groups.iter().map(RolloutGroup::pass_count).sum();
    let attempts: usize = groups.iter().map(RolloutGroup::n).sum();
    Ok(passes as f64 / attempts as f64)
}

/// Fraction of statements with at least one modified attempt.
pub fn statement_modification_metric(groups: &[RolloutGroup]) -> Result<f64> {
    if groups.is_empty() {
        return Err(invalid("modification metric over no statements"));
    }
    let touched = groups.iter().filter(|g| g.modified_count() > 0).count();
    Ok(touched as f64 / groups.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{group_from_attempts, ProofAttempt, Statement, StatementId, Verdict, VerdictStatus};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn group(id: &str, verdicts: &[(bool, bool)]) -> RolloutGroup {
        let s = Statement::base(StatementId::new(id), "", "f");
        let atts = verdicts
            .iter()
            .map(|&(pass, modified)| ProofAttempt {
                statement_id: s.id.clone(),
                body: String::new(),
                verdict: Verdict {
                    status: if pass { VerdictStatus::Pass } else { VerdictStatus::Fail },
                    modified,
                    used_escape_tactic: false,
                },
            })
            .collect();
        group_from_attempts(s, atts).unwrap()
    }

    fn passes(k: usize, n: usize) -> Vec<(bool, bool)> {
        (0..n).map(|i| (i < k, false)).collect()
    }

    #[test]
    fn correctness_example() {
        let gs = [group("a", &passes(4, 16)), group("b", &passes(8, 16))];
        assert_eq!(average_proof_correctness(&gs).unwrap(), 0.375);
        let full = [group("a", &passes(16, 16))];
        assert_eq!(average_proof_correctness(&full).unwrap(), 1.0);
        assert!(average_proof_correctness(&[]).is_err());
    }

    #[test]
    fn pass_at_x_examples() {
        let gs = [group("a", &passes(1, 4)), group("b", &passes(3, 4))];
        assert_eq!(pass_at_x(&gs, 1).unwrap(), 1.0);
        let none = [group("a", &passes(0, 4))];
        assert_eq!(pass_at_x(&none, 4).unwrap(), 0.0);
        assert!(pass_at_x(&gs, 5).is_err());
        // only the first x attempts count
        let late = [group("a", &[(false, false), (false, false), (true, false)])];
        assert_eq!(pass_at_x(&late, 2).unwrap(), 0.0);
        assert_eq!(pass_at_x(&late, 3).unwrap(), 1.0);
    }

    #[test]
    fn modification_examples() {
        let clean = [group("a", &passes(3, 4))];
        assert_eq!(statement_modification_metric(&clean).unwrap(), 0.0);
        let one_each = [
            group("a", &[(true, true), (false, false)]),
            group("b", &[(false, false), (false, true)]),
        ];
        assert_eq!(statement_modification_metric(&one_each).unwrap(), 1.0);
    }

    #[test]
    fn recount_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let n = rng.random_range(1..=12);
            let count = rng.random_range(1..=10);
            let raw: Vec<Vec<(bool, bool)>> = (0..count)
                .map(|_| (0..n).map(|_| (rng.random_bool(0.3), rng.random_bool(0.2))).collect())
                .collect();
            let gs: Vec<_> = raw
                .iter()
                .enumerate()
                .map(|(i, v)| group(&format!("g{i}"), v))
                .collect();
            let x = rng.random_range(1..=n);
            let mut hit = 0;
            let mut clean = 0;
            let mut touched = 0;
            for v in &raw {
                if v[..x].iter().any(|&(p, m)| p && !m) {
                    hit += 1;
                }
                clean += v.iter().filter(|&&(p, m)| p && !m).count();
                if v.iter().any(|&(_, m)| m) {
                    touched += 1;
                }
            }
            assert_eq!(pass_at_x(&gs, x).unwrap(), hit as f64 / count as f64);
            assert_eq!(
                average_proof_correctness(&gs).unwrap(),
                clean as f64 / (n * count) as f64
            );
            assert_eq!(
                statement_modification_metric(&gs).unwrap(),
                touched as f64 / count as f64
            );
        }
    }
}
