//! Exact expected updates by enumeration over queries, actions and next
//! states. Nothing here samples; every quantity is a finite sum.

use serde::{Deserialize, Serialize};

use crate::agents::{MixturePolicyState, QlAgentState};
use crate::error::{Error, Result};
use crate::mdp::{Cfmdp, FeedbackTable};
use crate::policy::{argmax, expectation, softmax_score};

/// Largest number of `(k, a, s')` terms an exact expectation may enumerate.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// How the query relates to the taken action inside an expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `k` and `a` drawn independently.
    Decoupled,
    /// `k = a`.
    Coupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedUpdateReport {
    /// Exact expected update with corruption, one entry per query/logit.
    pub corrupted_expectation: Vec<f64>,
    /// Exact expected update with all offsets set to zero.
    pub clean_expectation: Vec<f64>,
    pub max_abs_difference: f64,
    /// Expected per-`(s,k)` learning rate `h₁` (Q-learning only).
    pub beta: Option<f64>,
    /// `h₂ = β·E[c_{s'}]` (Q-learning only).
    pub h2: Option<f64>,
    /// `max_k |E[ξ(k)] − (h₁(δ(s,k) − Q(s,k)) + h₂)|` (Q-learning only).
    pub decomposition_residual: Option<f64>,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn guard(env: &Cfmdp) -> Result<()> {
    let na = env.n_actions() as u64;
    let terms = na * na * env.n_states() as u64;
    if terms > ENUMERATION_LIMIT {
        return Err(Error::Size {
            terms,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Joint weight of `(k, a)` under the given coupling.
fn pair_weight(coupling: Coupling, pi_k: &[f64], pi_a: &[f64], k: usize, a: usize) -> f64 {
    match coupling {
        Coupling::Decoupled => pi_k[k] * pi_a[a],
        Coupling::Coupled if k == a => pi_a[a],
        Coupling::Coupled => 0.0,
    }
}

/// Expected policy-gradient update of the softmax logits at `s` for the
/// stochastic policy `policy[s]`, with observed approval as the signal.
///
/// The clean expectation is the approval policy gradient on the uncorrupted
/// environment, `Σ_k π(k|s) δ(s,k) ∇ log π(k|s)`.
pub fn exact_pg_update(
    env: &Cfmdp,
    policy: &[Vec<f64>],
    s: usize,
    coupling: Coupling,
) -> Result<ExpectedUpdateReport> {
    guard(env)?;
    env.mdp.check_state(s)?;
    let pi = &policy[s];
    let (na, ns) = (env.n_actions(), env.n_states());
    let mut corrupted = vec![0.0; na];
    for k in 0..na {
        let score = softmax_score(pi, k);
        for a in 0..na {
            let w = pair_weight(coupling, pi, pi, k, a);
            if w == 0.0 {
                continue;
            }
            for sp in 0..ns {
                let p = w * env.mdp.transitions[s][a][sp];
                if p == 0.0 {
                    continue;
                }
                let signal = env.feedback.value(s, k) + env.corruption.offset(sp);
                for (c, g) in corrupted.iter_mut().zip(&score) {
                    *c += p * signal * g;
                }
            }
        }
    }
    let mut clean = vec![0.0; na];
    for k in 0..na {
        let score = softmax_score(pi, k);
        for (c, g) in clean.iter_mut().zip(&score) {
            *c += pi[k] * env.feedback.value(s, k) * g;
        }
    }
    Ok(ExpectedUpdateReport {
        max_abs_difference: max_abs_diff(&corrupted, &clean),
        corrupted_expectation: corrupted,
        clean_expectation: clean,
        beta: None,
        h2: None,
        decomposition_residual: None,
    })
}

/// Expected change `E[ξ(k) | H_t]` of every entry `Q(s, k)` for one step of
/// the given Q-learning agent in myopic approval mode.
///
/// The agent's flags select decoupled or coupled queries and the corrected
/// or plain learning rate. The decomposition residual is measured against
/// `h₁ = α_init / M(s)` and `h₂ = h₁ Σ_a π_A(a|s) E[c_{s'} | s, a]`.
pub fn exact_daql_update(
    env: &Cfmdp,
    agent: &QlAgentState,
    s: usize,
) -> Result<ExpectedUpdateReport> {
    guard(env)?;
    env.mdp.check_state(s)?;
    let (na, ns) = (env.n_actions(), env.n_states());
    let coupling = if agent.decoupled {
        Coupling::Decoupled
    } else {
        Coupling::Coupled
    };
    // coupled agents draw their single action from the floored policy when
    // corrected, mirroring `QlAgentState::approval_ql_step`
    let pi_a = match coupling {
        Coupling::Coupled if agent.is_correction => agent.query_policy(s)?,
        _ => agent.action_policy(s)?,
    };
    let pi_k = match coupling {
        Coupling::Decoupled => agent.query_policy(s)?,
        Coupling::Coupled => pi_a.clone(),
    };
    let m = agent.visit_counts[s] as f64;
    let rate = |k: usize| {
        if agent.is_correction {
            agent.alpha_init / (m * pi_k[k])
        } else {
            agent.alpha_init / m
        }
    };
    let mut corrupted = vec![0.0; na];
    let mut clean = vec![0.0; na];
    for (entry, (corr, cl)) in corrupted.iter_mut().zip(clean.iter_mut()).enumerate() {
        let q = agent.q[s][entry];
        for k in 0..na {
            for a in 0..na {
                let w = pair_weight(coupling, &pi_k, &pi_a, k, a);
                if w == 0.0 || k != entry {
                    // queries other than `entry` leave Q(s, entry) unchanged
                    continue;
                }
                let delta = env.feedback.value(s, k);
                for sp in 0..ns {
                    let p = w * env.mdp.transitions[s][a][sp];
                    if p == 0.0 {
                        continue;
                    }
                    *corr += p * rate(k) * (delta + env.corruption.offset(sp) - q);
                    *cl += p * rate(k) * (delta - q);
                }
            }
        }
    }
    let beta = agent.alpha_init / m;
    let mean_c: f64 = (0..na)
        .map(|a| pi_a[a] * env.expected_corruption(s, a))
        .sum();
    let h2 = beta * mean_c;
    let residual = (0..na)
        .map(|k| (corrupted[k] - (beta * (env.feedback.value(s, k) - agent.q[s][k]) + h2)).abs())
        .fold(0.0, f64::max);
    Ok(ExpectedUpdateReport {
        max_abs_difference: max_abs_diff(&corrupted, &clean),
        corrupted_expectation: corrupted,
        clean_expectation: clean,
        beta: Some(beta),
        h2: Some(h2),
        decomposition_residual: Some(residual),
    })
}

/// Result of checking that the expected mixture update does not decrease
/// expected true approval at a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncentiveCheck {
    /// Exact expected gradient `g` by enumeration.
    pub gradient: f64,
    /// `σ′(z) [R̄(π₁) − R̄(π₂)]`.
    pub closed_form_gradient: f64,
    pub z: f64,
    pub z_expected: f64,
    pub approval_before: f64,
    pub approval_after: f64,
    /// `R̄(π_{z̄}) − R̄(π_z)`.
    pub gap: f64,
    pub passed: bool,
}

pub const INCENTIVE_TOLERANCE: f64 = 1e-12;

/// Expected true approval `R̄(π) = E_{k∼π}[δ(s,k)]`.
pub fn expected_approval(feedback: &FeedbackTable, probs: &[f64], s: usize) -> f64 {
    expectation(probs, &feedback.values[s])
}

pub fn check_update_incentive(
    env: &Cfmdp,
    mixture: &MixturePolicyState,
    s: usize,
) -> Result<IncentiveCheck> {
    guard(env)?;
    env.mdp.check_state(s)?;
    let pi = mixture.policy(s);
    let (na, ns) = (env.n_actions(), env.n_states());
    let mut g = 0.0;
    for k in 0..na {
        if pi[k] == 0.0 {
            continue;
        }
        let dlog = mixture.log_derivative(s, k)?;
        for a in 0..na {
            for sp in 0..ns {
                let p = pi[k] * pi[a] * env.mdp.transitions[s][a][sp];
                g += p * (env.feedback.value(s, k) + env.corruption.offset(sp)) * dlog;
            }
        }
    }
    let r1 = expected_approval(&env.feedback, &mixture.expert_1[s], s);
    let r2 = expected_approval(&env.feedback, &mixture.expert_2[s], s);
    let closed = crate::policy::sigmoid_prime(mixture.z) * (r1 - r2);
    let z_expected = mixture.z + mixture.learning_rate * g;
    let before = expected_approval(&env.feedback, &pi, s);
    let after = expected_approval(&env.feedback, &mixture.policy_at(z_expected, s), s);
    let gap = after - before;
    Ok(IncentiveCheck {
        gradient: g,
        closed_form_gradient: closed,
        z: mixture.z,
        z_expected,
        approval_before: before,
        approval_after: after,
        gap,
        passed: gap >= -INCENTIVE_TOLERANCE,
    })
}

/// Policy a myopic learner converges to when it treats corrupted feedback as
/// reward: `argmax_a E[c_{s'} | s, a] + δ(s, a)`.
pub fn standard_rl_fixed_point(env: &Cfmdp) -> Vec<usize> {
    (0..env.n_states())
        .map(|s| {
            let values: Vec<f64> = (0..env.n_actions())
                .map(|a| env.expected_corruption(s, a) + env.feedback.value(s, a))
                .collect();
            argmax(&values)
        })
        .collect()
}

/// `max_s max_{k≠k'} |(Q(s,k) − Q(s,k')) − (δ(s,k) − δ(s,k'))|`.
///
/// Per state this is the spread of `Q − δ`, which is invariant to adding a
/// constant to a row.
pub fn convergence_gap(q: &[Vec<f64>], feedback: &FeedbackTable) -> f64 {
    q.iter()
        .zip(&feedback.values)
        .map(|(qr, dr)| {
            let diffs = qr.iter().zip(dr).map(|(a, b)| a - b);
            let (lo, hi) = diffs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                (lo.min(d), hi.max(d))
            });
            if qr.is_empty() {
                0.0
            } else {
                hi - lo
            }
        })
        .fold(0.0, f64::max)
}

/// Smallest positive gap between a state's best and second-best feedback
/// value, over all states; infinite when no state has one.
pub fn min_feedback_gap(feedback: &FeedbackTable) -> f64 {
    feedback
        .values
        .iter()
        .filter_map(|row| {
            let best = row[argmax(row)];
            row.iter()
                .map(|v| best - v)
                .filter(|d| *d > 0.0)
                .reduce(f64::min)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Query-rate statistics at a frozen state: the sample mean and standard
/// error of `α(s,k)`, which is the corrected rate when `k` is queried and
/// zero otherwise.
pub fn sample_query_rate<R: rand::Rng + ?Sized>(
    agent: &QlAgentState,
    s: usize,
    k: usize,
    draws: u64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let pi_k = agent.query_policy(s)?;
    let m = agent.visit_counts[s] as f64;
    let rate = agent.alpha_init / (m * pi_k[k]);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let x = if crate::policy::sample_categorical(&pi_k, rng) == k {
            rate
        } else {
            0.0
        };
        sum += x;
        sum_sq += x * x;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_example_d1, FeedbackKind};

    #[test]
    fn decoupled_pg_matches_clean_on_d1() {
        let env = make_example_d1();
        let uniform = vec![vec![0.5, 0.5]; 2];
        for s in 0..2 {
            let r = exact_pg_update(&env, &uniform, s, Coupling::Decoupled).unwrap();
            assert!(r.max_abs_difference < 1e-10);
        }
    }

    #[test]
    fn coupled_pg_favors_tampering_on_d1() {
        let env = make_example_d1();
        let uniform = vec![vec![0.5, 0.5]; 2];
        let r = exact_pg_update(&env, &uniform, 0, Coupling::Coupled).unwrap();
        // Σ_a ½ (δ(a) + c_a)(e_a − π): ½·1·(½, −½) + ½·10·(−½, ½) = (−2.25, 2.25)
        assert!((r.corrupted_expectation[0] + 2.25).abs() < 1e-12);
        assert!((r.corrupted_expectation[1] - 2.25).abs() < 1e-12);
        assert!(r.max_abs_difference > 0.0);
    }

    #[test]
    fn zero_corruption_identical_expectations() {
        let env = make_example_d1().uncorrupted();
        let pol = vec![vec![0.3, 0.7]; 2];
        let r = exact_pg_update(&env, &pol, 1, Coupling::Decoupled).unwrap();
        assert_eq!(r.corrupted_expectation, r.clean_expectation);
    }

    #[test]
    fn daql_fixed_point_has_zero_update() {
        let env = make_example_d1().uncorrupted();
        let agent = QlAgentState::new(2, 2, 0.5, 0).with_q(env.feedback.values.clone());
        let r = exact_daql_update(&env, &agent, 0).unwrap();
        assert!(r.corrupted_expectation.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn daql_prefers_desired_on_d1() {
        let env = make_example_d1();
        let agent = QlAgentState::new(2, 2, 0.1, 0).with_q(vec![vec![5.0, 5.0]; 2]);
        let r = exact_daql_update(&env, &agent, 0).unwrap();
        let beta = r.beta.unwrap();
        assert_eq!(beta, 0.1);
        let diff = r.corrupted_expectation[0] - r.corrupted_expectation[1];
        assert!((diff - beta).abs() < 1e-12);
        assert!(r.decomposition_residual.unwrap() < 1e-12);
    }

    #[test]
    fn uncorrected_daql_breaks_decomposition() {
        let env = make_example_d1();
        // greedy on x1 with many visits: the policy mostly takes x1
        let mut agent = QlAgentState::new(2, 2, 0.1, 0)
            .with_flags(true, false)
            .with_q(vec![vec![5.0, 6.0]; 2]);
        agent.visit_counts[0] = 20;
        let r = exact_daql_update(&env, &agent, 0).unwrap();
        assert!(r.decomposition_residual.unwrap() > 1e-6);
    }

    #[test]
    fn mixture_incentive_on_d1() {
        let env = make_example_d1();
        let good = vec![vec![1.0, 0.0]; 2];
        let bad = vec![vec![0.0, 1.0]; 2];
        for z in [-2.0, 0.0, 2.0] {
            let m = MixturePolicyState::new(good.clone(), bad.clone(), z, 0.1).unwrap();
            let c = check_update_incentive(&env, &m, 0).unwrap();
            assert!(c.passed && c.gap > 0.0);
            assert!((c.gradient - c.closed_form_gradient).abs() < 1e-12);
            let swapped = MixturePolicyState::new(bad.clone(), good.clone(), z, 0.1).unwrap();
            let c = check_update_incentive(&env, &swapped, 1).unwrap();
            assert!(c.passed && c.z_expected < z);
        }
        let same = MixturePolicyState::new(good.clone(), good, 0.3, 0.1).unwrap();
        let c = check_update_incentive(&env, &same, 0).unwrap();
        assert_eq!(c.gap, 0.0);
        assert!(c.passed);
    }

    #[test]
    fn fixed_point_on_d1_tampers() {
        let env = make_example_d1();
        assert_eq!(standard_rl_fixed_point(&env), vec![1, 1]);
        assert_eq!(standard_rl_fixed_point(&env.uncorrupted()), vec![0, 0]);
    }

    #[test]
    fn gap_cases() {
        let fb = FeedbackTable {
            kind: FeedbackKind::RewardFeedback,
            values: vec![vec![1.0, 0.0, 2.0], vec![0.5, 0.5, 0.0]],
        };
        assert_eq!(convergence_gap(&fb.values, &fb), 0.0);
        let shifted: Vec<Vec<f64>> = fb
            .values
            .iter()
            .zip([3.0, -7.0])
            .map(|(r, c)| r.iter().map(|x| x + c).collect())
            .collect();
        assert!(convergence_gap(&shifted, &fb) < 1e-12);
        let mut bumped = fb.values.clone();
        bumped[1][2] += 0.3;
        assert!((convergence_gap(&bumped, &fb) - 0.3).abs() < 1e-12);
        assert!((min_feedback_gap(&fb) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn enumeration_guard() {
        let n = 200;
        let env = Cfmdp {
            mdp: crate::mdp::Mdp {
                n_states: n,
                n_actions: 100,
                initial_dist: vec![1.0 / n as f64; n],
                transitions: vec![vec![vec![1.0 / n as f64; n]; 100]; n],
                reward: vec![vec![0.0; 100]; n],
                discount: 0.0,
            },
            corruption: crate::mdp::CorruptionMap::zeros(n),
            feedback: FeedbackTable {
                kind: FeedbackKind::RewardFeedback,
                values: vec![vec![0.0; 100]; n],
            },
        };
        let pol = vec![vec![0.01; 100]; n];
        assert!(matches!(
            exact_pg_update(&env, &pol, 0, Coupling::Decoupled),
            Err(Error::Size { .. })
        ));
    }
}
