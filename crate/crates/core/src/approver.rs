//! The simulated approver: optimal action values on the uncorrupted MDP,
//! turned into per-state centred approval feedback.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{FeedbackKind, FeedbackTable, Mdp};
use crate::policy::{argmax, sample_categorical};
use crate::rng::rng_from_seed;

/// Stopping residual for value iteration.
pub const VI_TOLERANCE: f64 = 1e-8;
pub const VI_MAX_ITERATIONS: usize = 1_000_000;

/// How the approver's action values are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum ApproverMethod {
    #[default]
    ValueIteration,
    /// Tabular Q-learning with uniform exploration; noisier but closer to a
    /// learned approver.
    QLearning { steps: u64, seed: u64 },
}

pub type QTable = Vec<Vec<f64>>;

/// One Bellman optimality backup.
fn backup(mdp: &Mdp, q: &QTable) -> QTable {
    let v: Vec<f64> = q.iter().map(|row| row[argmax(row)]).collect();
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    let future: f64 = mdp.transitions[s][a]
                        .iter()
                        .zip(&v)
                        .map(|(p, v)| p * v)
                        .sum();
                    mdp.reward[s][a] + mdp.discount * future
                })
                .collect()
        })
        .collect()
}

/// `Q*` by value iteration, stopped once the sup-norm change drops below
/// [`VI_TOLERANCE`].
pub fn value_iteration(mdp: &Mdp) -> Result<QTable> {
    mdp.validate()?;
    let mut q = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    for _ in 0..VI_MAX_ITERATIONS {
        let next = backup(mdp, &q);
        let change = next
            .iter()
            .flatten()
            .zip(q.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = next;
        if change < VI_TOLERANCE {
            return Ok(q);
        }
    }
    Err(Error::Numerical(format!(
        "value iteration did not reach residual {VI_TOLERANCE} within {VI_MAX_ITERATIONS} sweeps"
    )))
}

/// Tabular Q-learning with uniform behaviour and per-pair `1/n` step sizes.
pub fn q_learning(mdp: &Mdp, steps: u64, seed: u64) -> Result<QTable> {
    mdp.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut q = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    let mut counts = vec![vec![0u64; mdp.n_actions]; mdp.n_states];
    let mut s = mdp.sample_initial_state(&mut rng);
    for _ in 0..steps {
        let a = rng.random_range(0..mdp.n_actions);
        let next = sample_categorical(&mdp.transitions[s][a], &mut rng);
        counts[s][a] += 1;
        let lr = 1.0 / counts[s][a] as f64;
        let target = mdp.reward[s][a] + mdp.discount * q[next][argmax(&q[next])];
        q[s][a] += lr * (target - q[s][a]);
        s = next;
    }
    Ok(q)
}

pub fn train_approver(mdp: &Mdp, method: ApproverMethod) -> Result<QTable> {
    match method {
        ApproverMethod::ValueIteration => value_iteration(mdp),
        ApproverMethod::QLearning { steps, seed } => q_learning(mdp, steps, seed),
    }
}

/// Centres each row: `δ(s,k) = Q(s,k) − mean_k Q(s,k)`.
pub fn approval_from_q(q: &[Vec<f64>]) -> FeedbackTable {
    let values = q
        .iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            row.iter().map(|x| x - mean).collect()
        })
        .collect();
    FeedbackTable {
        kind: FeedbackKind::ApprovalFeedback,
        values,
    }
}

/// Deterministic policy maximising feedback in every state.
pub fn approval_optimal_policy(feedback: &FeedbackTable) -> Vec<usize> {
    feedback.values.iter().map(|row| argmax(row)).collect()
}

pub fn greedy_policy(q: &[Vec<f64>]) -> Vec<usize> {
    q.iter().map(|row| argmax(row)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::make_example_d1;
    use crate::procedural::{generate_procedural, ProceduralParams};

    /// Residual recomputed without the solver's backup helper.
    fn residual(mdp: &Mdp, q: &QTable) -> f64 {
        let mut worst: f64 = 0.0;
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let mut future = 0.0;
                for sp in 0..mdp.n_states {
                    let best = q[sp].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    future += mdp.transitions[s][a][sp] * best;
                }
                let r = q[s][a] - (mdp.reward[s][a] + mdp.discount * future);
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    #[test]
    fn single_state_geometric_series() {
        let mdp = Mdp {
            n_states: 1,
            n_actions: 3,
            initial_dist: vec![1.0],
            transitions: vec![vec![vec![1.0]; 3]],
            reward: vec![vec![1.0; 3]],
            discount: 0.9,
        };
        let q = value_iteration(&mdp).unwrap();
        for v in &q[0] {
            assert!((v - 10.0).abs() < 1e-6);
        }
    }

    #[test]
    fn myopic_d1_is_feedback() {
        let env = make_example_d1();
        let q = value_iteration(&env.mdp).unwrap();
        assert_eq!(q, env.feedback.values);
    }

    #[test]
    fn random_mdp_fixed_point() {
        let params = ProceduralParams {
            n_states: 5,
            n_actions: 3,
            ..Default::default()
        };
        for seed in 0..5 {
            let inst = generate_procedural(&params, seed).unwrap();
            let q = value_iteration(&inst.twin.mdp).unwrap();
            assert!(residual(&inst.twin.mdp, &q) < 1e-7);
        }
    }

    #[test]
    fn q_learning_approaches_value_iteration() {
        let params = ProceduralParams {
            n_states: 3,
            n_actions: 2,
            discount: 0.5,
            ..Default::default()
        };
        let inst = generate_procedural(&params, 3).unwrap();
        let exact = value_iteration(&inst.twin.mdp).unwrap();
        let learned = q_learning(&inst.twin.mdp, 400_000, 1).unwrap();
        let err = exact
            .iter()
            .flatten()
            .zip(learned.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.2, "max error {err}");
    }

    #[test]
    fn centering() {
        let fb = approval_from_q(&[vec![4.0, 0.0], vec![3.0, 3.0]]);
        assert_eq!(fb.values, vec![vec![2.0, -2.0], vec![0.0, 0.0]]);
        fb.validate(2, 2).unwrap();
    }

    #[test]
    fn policy_ties_and_d1() {
        let fb = FeedbackTable {
            kind: FeedbackKind::RewardFeedback,
            values: vec![vec![0.5, 0.5, 0.5]],
        };
        assert_eq!(approval_optimal_policy(&fb), vec![0]);
        assert_eq!(
            approval_optimal_policy(&make_example_d1().feedback),
            vec![0, 0]
        );
    }
}
