//! Group-relative policy optimization: sequence-level probability ratios,
//! the clipped surrogate, the `k3` KL estimator, objective assembly and
//! plain gradient ascent.
//!
//! At an exact tie between the two arguments of the `min`, the unclipped
//! branch is differentiated.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GarError, Result};
use crate::policy::{snapshot, Policy, PolicySnapshot, Prompt, TabularPolicy};

/// Which policy supplies the ratio denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioDenominator {
    /// The policy that generated the samples.
    #[default]
    Old,
    /// The frozen reference policy.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoHyperparams {
    pub epsilon: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub updates_per_iteration: u32,
    #[serde(default)]
    pub ratio_denominator: RatioDenominator,
}

impl Default for GrpoHyperparams {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            beta: 0.01,
            learning_rate: 0.05,
            updates_per_iteration: 1,
            ratio_denominator: RatioDenominator::Old,
        }
    }
}

impl GrpoHyperparams {
    /// Checks ranges; `prefix` names the config section in the error.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let bad = |key: &str, reason: String| GarError::Config {
            key: format!("{prefix}{key}"),
            reason,
        };
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(bad("epsilon", format!("must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(bad("beta", format!("must be finite and >= 0, got {}", self.beta)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad(
                "learning_rate",
                format!("must be finite and > 0, got {}", self.learning_rate),
            ));
        }
        if self.updates_per_iteration == 0 {
            return Err(bad("updates_per_iteration", "must be at least 1".into()));
        }
        Ok(())
    }
}

/// Log-probabilities of one sampled output under the three policies, plus
/// its advantage. `logp_old` is whatever the ratio denominator is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoItem {
    pub logp_new: f64,
    pub logp_old: f64,
    pub logp_ref: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Fuser,
    Prover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoBatch {
    pub role: Role,
    pub items: Vec<GrpoItem>,
}

/// A sampled output with the constants the objective needs. The live
/// log-probability is recomputed from the policy being optimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoSample {
    pub prompt: Prompt,
    pub response: Vec<usize>,
    pub logp_old: f64,
    pub logp_ref: f64,
    pub advantage: f64,
}

impl GrpoSample {
    /// Scores `response` under the old and reference policies.
    pub fn score(
        prompt: Prompt,
        response: Vec<usize>,
        advantage: f64,
        old: &dyn Policy,
        reference: &dyn Policy,
        denominator: RatioDenominator,
    ) -> Result<Self> {
        let logp_ref = reference.log_prob(prompt, &response)?;
        let logp_old = match denominator {
            RatioDenominator::Old => old.log_prob(prompt, &response)?,
            RatioDenominator::Reference => logp_ref,
        };
        Ok(Self {
            prompt,
            response,
            logp_old,
            logp_ref,
            advantage,
        })
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite, got {v}")))
    }
}

pub fn prob_ratio(logp_new: f64, logp_old: f64) -> Result<f64> {
    finite("logp_new", logp_new)?;
    finite("logp_old", logp_old)?;
    Ok((logp_new - logp_old).exp())
}

pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// `u - ln u - 1` with `u = pi_ref / pi_new`.
pub fn kl_estimate(logp_new: f64, logp_ref: f64) -> Result<f64> {
    finite("logp_new", logp_new)?;
    finite("logp_ref", logp_ref)?;
    let d = logp_ref - logp_new;
    // exp_m1 keeps tiny differences from cancelling to zero
    Ok((d.exp_m1() - d).max(0.0))
}

fn item_value(item: &GrpoItem, params: &GrpoHyperparams) -> Result<f64> {
    let ratio = prob_ratio(item.logp_new, item.logp_old)?;
    finite("advantage", item.advantage)?;
    let kl = kl_estimate(item.logp_new, item.logp_ref)?;
    Ok(clipped_surrogate(ratio, item.advantage, params.epsilon) - params.beta * kl)
}

/// Derivative of one item's term with respect to its `logp_new`.
fn item_slope(item: &GrpoItem, params: &GrpoHyperparams) -> Result<f64> {
    let ratio = prob_ratio(item.logp_new, item.logp_old)?;
    finite("advantage", item.advantage)?;
    finite("logp_ref", item.logp_ref)?;
    let a = item.advantage;
    let clipped = ratio.clamp(1.0 - params.epsilon, 1.0 + params.epsilon);
    let surrogate = if ratio * a <= clipped * a { ratio * a } else { 0.0 };
    let u = (item.logp_ref - item.logp_new).exp();
    Ok(surrogate - params.beta * (1.0 - u))
}

pub fn objective(batch: &GrpoBatch, params: &GrpoHyperparams) -> Result<f64> {
    if batch.items.is_empty() {
        return Err(invalid("objective of an empty batch"));
    }
    let mut total = 0.0;
    for item in &batch.items {
        total += item_value(item, params)?;
    }
    Ok(total / batch.items.len() as f64)
}

/// Evaluates the live log-probabilities of `samples` under `policy`.
pub fn build_batch(role: Role, samples: &[GrpoSample], policy: &dyn Policy) -> Result<GrpoBatch> {
    let items = samples
        .iter()
        .map(|s| {
            Ok(GrpoItem {
                logp_new: policy.log_prob(s.prompt, &s.response)?,
                logp_old: s.logp_old,
                logp_ref: s.logp_ref,
                advantage: s.advantage,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GrpoBatch { role, items })
}

/// Gradient of [`objective`] over the samples, taken at `policy`.
pub fn objective_gradient(samples: &[GrpoSample], params: &GrpoHyperparams, policy: &dyn Policy) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(invalid("gradient of an empty batch"));
    }
    let mut grad = vec![0.0; policy.num_params()];
    let scale = 1.0 / samples.len() as f64;
    for s in samples {
        let item = GrpoItem {
            logp_new: policy.log_prob(s.prompt, &s.response)?,
            logp_old: s.logp_old,
            logp_ref: s.logp_ref,
            advantage: s.advantage,
        };
        let slope = item_slope(&item, params)?;
        if slope == 0.0 {
            continue;
        }
        let g = policy.grad_log_prob(s.prompt, &s.response)?;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += scale * slope * gi;
        }
    }
    Ok(grad)
}

/// One ascent step `theta += lr * gradient`.
pub fn apply_update(policy: &mut TabularPolicy, gradient: &[f64], params: &GrpoHyperparams) -> Result<PolicySnapshot> {
    if gradient.len() != policy.num_params() {
        return Err(invalid(format!(
            "gradient has {} entries, policy has {} parameters",
            gradient.len(),
            policy.num_params()
        )));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(invalid("non-finite gradient"));
    }
    for (t, g) in policy.params_mut().iter_mut().zip(gradient) {
        *t += params.learning_rate * g;
    }
    Ok(snapshot(policy))
}

/// Result of [`optimize`]: objective at the start of the step and the new
/// parameters.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub objective_before: f64,
    pub snapshot: PolicySnapshot,
}

/// Runs `updates_per_iteration` ascent steps on `samples`, keeping the old
/// and reference log-probabilities fixed.
pub fn optimize(
    role: Role,
    policy: &mut TabularPolicy,
    samples: &[GrpoSample],
    params: &GrpoHyperparams,
) -> Result<UpdateOutcome> {
    let objective_before = objective(&build_batch(role, samples, &*policy)?, params)?;
    let mut snap = snapshot(policy);
    for _ in 0..params.updates_per_iteration {
        let g = objective_gradient(samples, params, &*policy)?;
        snap = apply_update(policy, &g, params)?;
    }
    Ok(UpdateOutcome {
        objective_before,
        snapshot: snap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::softmax;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hp(epsilon: f64, beta: f64) -> GrpoHyperparams {
        GrpoHyperparams {
            epsilon,
            beta,
            ..GrpoHyperparams::default()
        }
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(prob_ratio(-1.3, -1.3).unwrap(), 1.0);
        assert!((prob_ratio(2f64.ln() - 3.0, -3.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(prob_ratio(f64::NAN, 0.0).is_err());
        assert!(prob_ratio(0.0, f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn ratio_matches_probability_division() {
        let new = TabularPolicy::from_params(1, 1, 4, vec![0.3, -1.0, 2.0, 0.1]).unwrap();
        let old = TabularPolicy::from_params(1, 1, 4, vec![-0.5, 0.4, 1.1, 0.0]).unwrap();
        let (pn, po) = (softmax(new.row(0, 0)), softmax(old.row(0, 0)));
        for t in 0..4 {
            let r = prob_ratio(
                new.log_prob(Prompt::new(0, 1), &[t]).unwrap(),
                old.log_prob(Prompt::new(0, 1), &[t]).unwrap(),
            )
            .unwrap();
            assert!((r - pn[t] / po[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_examples() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        for a in [-2.0, -0.3, 0.0, 0.7, 5.0] {
            assert_eq!(clipped_surrogate(1.0, a, 0.2), a);
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_estimate(-0.7, -0.7).unwrap(), 0.0);
        let v = kl_estimate(0.0, 2f64.ln()).unwrap();
        assert!((v - (2.0 - 2f64.ln() - 1.0)).abs() < 1e-15);
        assert!((v - 0.30685).abs() < 1e-5);
        assert!(kl_estimate(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn kl_expectation_equals_exact_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let theta: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let refp: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = TabularPolicy::from_params(1, 1, 8, theta).unwrap();
        let r = TabularPolicy::from_params(1, 1, 8, refp).unwrap();
        let (pp, pr) = (softmax(p.row(0, 0)), softmax(r.row(0, 0)));
        let exact: f64 = pp.iter().zip(&pr).map(|(a, b)| a * (a / b).ln()).sum();
        let mut expected = 0.0;
        for t in 0..8 {
            let ln = p.log_prob(Prompt::new(0, 1), &[t]).unwrap();
            let lr = r.log_prob(Prompt::new(0, 1), &[t]).unwrap();
            expected += ln.exp() * kl_estimate(ln, lr).unwrap();
        }
        assert!((expected - exact).abs() < 1e-10, "{expected} vs {exact}");
    }

    #[test]
    fn objective_examples() {
        let zero = GrpoBatch {
            role: Role::Fuser,
            items: vec![
                GrpoItem {
                    logp_new: -1.0,
                    logp_old: -1.2,
                    logp_ref: -1.0,
                    advantage: 0.0
                };
                3
            ],
        };
        assert_eq!(objective(&zero, &hp(0.2, 0.01)).unwrap(), 0.0);
        let one = GrpoBatch {
            role: Role::Prover,
            items: vec![GrpoItem {
                logp_new: -2.0,
                logp_old: -2.0,
                logp_ref: -0.5,
                advantage: 1.0,
            }],
        };
        assert_eq!(objective(&one, &hp(0.2, 0.0)).unwrap(), 1.0);
        let empty = GrpoBatch {
            role: Role::Fuser,
            items: vec![],
        };
        assert!(objective(&empty, &hp(0.2, 0.0)).is_err());
    }

    fn random_items(rng: &mut ChaCha8Rng, n: usize) -> Vec<GrpoItem> {
        (0..n)
            .map(|_| GrpoItem {
                logp_new: rng.random_range(-6.0..0.0),
                logp_old: rng.random_range(-6.0..0.0),
                logp_ref: rng.random_range(-6.0..0.0),
                advantage: rng.random_range(-2.0..2.0),
            })
            .collect()
    }

    #[test]
    fn objective_matches_resummation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(1..20);
            let items = random_items(&mut rng, n);
            let (eps, beta) = (rng.random_range(0.05..0.5), rng.random_range(0.0..0.5));
            let mut sum = 0.0;
            for it in &items {
                let rho = (it.logp_new - it.logp_old).exp();
                let clip = if rho < 1.0 - eps {
                    1.0 - eps
                } else if rho > 1.0 + eps {
                    1.0 + eps
                } else {
                    rho
                };
                let surr = if rho * it.advantage < clip * it.advantage {
                    rho * it.advantage
                } else {
                    clip * it.advantage
                };
                let u = (it.logp_ref - it.logp_new).exp();
                sum += surr - beta * (u - u.ln() - 1.0);
            }
            let want = sum / items.len() as f64;
            let got = objective(
                &GrpoBatch {
                    role: Role::Fuser,
                    items,
                },
                &hp(eps, beta),
            )
            .unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }

    fn random_table(rng: &mut ChaCha8Rng, contexts: usize, positions: usize, vocab: usize) -> TabularPolicy {
        let theta = (0..contexts * positions * vocab)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        TabularPolicy::from_params(contexts, positions, vocab, theta).unwrap()
    }

    #[test]
    fn zero_advantage_without_kl_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_table(&mut rng, 2, 3, 4);
        let samples: Vec<_> = (0..6)
            .map(|i| GrpoSample {
                prompt: Prompt::new(i % 2, 3),
                response: vec![i % 4, (i + 1) % 4, 0],
                logp_old: -3.0,
                logp_ref: -1.0,
                advantage: 0.0,
            })
            .collect();
        let g = objective_gradient(&samples, &hp(0.2, 0.0), &p).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn clipped_out_item_contributes_nothing() {
        let p = TabularPolicy::uniform(1, 1, 4).unwrap();
        let lp = (0.25f64).ln();
        // ratio 2 with positive advantage: clip wins the min
        let s = GrpoSample {
            prompt: Prompt::new(0, 1),
            response: vec![1],
            logp_old: lp - 2f64.ln(),
            logp_ref: lp,
            advantage: 1.0,
        };
        let g = objective_gradient(&[s], &hp(0.2, 0.0), &p).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn first_update_surrogate_is_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for it in random_items(&mut rng, 30) {
            let r = prob_ratio(it.logp_old, it.logp_old).unwrap();
            assert_eq!(clipped_surrogate(r, it.advantage, 0.2), it.advantage);
        }
    }

    #[test]
    fn apply_update_examples() {
        let mut p = TabularPolicy::from_params(1, 1, 2, vec![0.5, -0.25]).unwrap();
        let params = GrpoHyperparams {
            learning_rate: 0.1,
            ..GrpoHyperparams::default()
        };
        let s = apply_update(&mut p, &[0.0, 0.0], &params).unwrap();
        assert_eq!(s.params(), &[0.5, -0.25]);
        let s = apply_update(&mut p, &[1.0, -1.0], &params).unwrap();
        assert!((s.params()[0] - 0.6).abs() < 1e-15);
        assert!((s.params()[1] + 0.35).abs() < 1e-15);
        assert!(apply_update(&mut p, &[1.0], &params).is_err());
    }

    #[test]
    fn successive_steps_differ_from_one_summed_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let base = random_table(&mut rng, 1, 2, 3);
        let samples: Vec<_> = (0..4)
            .map(|i| {
                let resp = vec![i % 3, (i * 2) % 3];
                let lp = base.log_prob(Prompt::new(0, 2), &resp).unwrap();
                GrpoSample {
                    prompt: Prompt::new(0, 2),
                    response: resp,
                    logp_old: lp,
                    logp_ref: lp,
                    advantage: [1.5, -0.5, 0.3, -1.3][i],
                }
            })
            .collect();
        let params = GrpoHyperparams {
            learning_rate: 0.5,
            epsilon: 0.9,
            ..GrpoHyperparams::default()
        };
        let mut twice = base.clone();
        let g1 = objective_gradient(&samples, &params, &twice).unwrap();
        apply_update(&mut twice, &g1, &params).unwrap();
        let g2 = objective_gradient(&samples, &params, &twice).unwrap();
        apply_update(&mut twice, &g2, &params).unwrap();
        let mut summed = base.clone();
        let g: Vec<f64> = g1.iter().zip(&g1).map(|(a, b)| a + b).collect();
        apply_update(&mut summed, &g, &params).unwrap();
        let gap: f64 = twice
            .params()
            .iter()
            .zip(summed.params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap > 1e-4, "curved objective produced linear steps");
    }

    #[test]
    fn reference_denominator_uses_reference_log_prob() {
        let old = TabularPolicy::from_params(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let reference = TabularPolicy::uniform(1, 1, 3).unwrap();
        let s = GrpoSample::score(
            Prompt::new(0, 1),
            vec![0],
            1.0,
            &old,
            &reference,
            RatioDenominator::Reference,
        )
        .unwrap();
        assert_eq!(s.logp_old, s.logp_ref);
        let s = GrpoSample::score(Prompt::new(0, 1), vec![0], 1.0, &old, &reference, RatioDenominator::Old).unwrap();
        assert!(s.logp_old > s.logp_ref);
    }

    #[test]
    fn validate_names_bad_key() {
        let bad = GrpoHyperparams {
            epsilon: 1.5,
            ..GrpoHyperparams::default()
        };
        match bad.validate("fuser_").unwrap_err() {
            GarError::Config { key, .. } => assert_eq!(key, "fuser_epsilon"),
            other => panic!("unexpected {other}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn item() -> impl Strategy<Value = GrpoItem> {
            (-8.0f64..0.0, -8.0f64..0.0, -8.0f64..0.0, -3.0f64..3.0).prop_map(|(n, o, r, a)| GrpoItem {
                logp_new: n,
                logp_old: o,
                logp_ref: r,
                advantage: a,
            })
        }

        proptest! {
            #[test]
            fn kl_nonnegative(a in -50.0f64..50.0, b in -50.0f64..50.0) {
                let v = kl_estimate(a, b).unwrap();
                prop_assert!(v >= 0.0);
                if a != b {
                    prop_assert!(v > 0.0 || (a - b).abs() < 1e-7);
                }
            }

            #[test]
            fn objective_permutation_invariant(items in prop::collection::vec(item(), 1..24), seed in any::<u64>()) {
                let params = hp(0.2, 0.05);
                let mut shuffled = items.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for i in (1..shuffled.len()).rev() {
                    shuffled.swap(i, rng.random_range(0..=i));
                }
                let a = objective(&GrpoBatch { role: Role::Prover, items }, &params).unwrap();
                let b = objective(&GrpoBatch { role: Role::Prover, items: shuffled }, &params).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }

            #[test]
            fn unclipped_limit(items in prop::collection::vec(item(), 1..24)) {
                let params = hp(1e300, 0.0);
                let got = objective(&GrpoBatch { role: Role::Fuser, items: items.clone() }, &params).unwrap();
                let want = items
                    .iter()
                    .map(|i| (i.logp_new - i.logp_old).exp() * i.advantage)
                    .sum::<f64>()
                    / items.len() as f64;
                prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }
}
