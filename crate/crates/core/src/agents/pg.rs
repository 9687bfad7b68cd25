//! Tabular softmax policy-gradient agents, and the two-expert mixture policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approver::QTable;
use crate::error::{Error, Result};
use crate::mdp::{Cfmdp, StepOutcome};
use crate::policy::{
    argmax, sample_categorical, sigmoid, sigmoid_prime, softmax, softmax_entropy_grad,
    softmax_score,
};

pub const DEFAULT_PG_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_ENTROPY_COEFF: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgAgentState {
    /// `θ[s][k]`; the policy at `s` is `softmax(θ[s])`.
    pub logits: QTable,
    pub learning_rate: f64,
    pub entropy_coeff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgStep {
    pub action: usize,
    pub query: usize,
    pub outcome: StepOutcome,
}

impl PgAgentState {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            logits: vec![vec![0.0; n_actions]; n_states],
            learning_rate: DEFAULT_PG_LEARNING_RATE,
            entropy_coeff: DEFAULT_ENTROPY_COEFF,
        }
    }

    pub fn validate(&self, env: &Cfmdp) -> Result<()> {
        if self.logits.len() != env.n_states()
            || self.logits.iter().any(|r| r.len() != env.n_actions())
        {
            return Err(Error::config(
                "logit table shape does not match the environment",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "policy-gradient learning rate must be positive",
            ));
        }
        if !(self.entropy_coeff >= 0.0 && self.entropy_coeff.is_finite()) {
            return Err(Error::config("entropy coefficient must be non-negative"));
        }
        if self.logits.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::config("logits must be finite"));
        }
        Ok(())
    }

    pub fn policy(&self, s: usize) -> Vec<f64> {
        softmax(&self.logits[s])
    }

    pub fn policy_table(&self) -> QTable {
        (0..self.logits.len()).map(|s| self.policy(s)).collect()
    }

    /// Ascent step on `d̃ log π(k|s) + η H(π(·|s))` for row `s` only.
    pub fn apply_update(&mut self, s: usize, k: usize, signal: f64) {
        let probs = self.policy(s);
        let score = softmax_score(&probs, k);
        let ent = softmax_entropy_grad(&probs);
        let (lr, eta) = (self.learning_rate, self.entropy_coeff);
        for ((theta, g), h) in self.logits[s].iter_mut().zip(score).zip(ent) {
            *theta += lr * signal * g + lr * eta * h;
        }
    }

    /// Decoupled approval policy gradient: independent action and query.
    pub fn dapg_step<R: Rng + ?Sized>(
        &mut self,
        env: &Cfmdp,
        s: usize,
        rng: &mut R,
    ) -> Result<PgStep> {
        env.mdp.check_state(s)?;
        let probs = self.policy(s);
        let action = sample_categorical(&probs, rng);
        let query = sample_categorical(&probs, rng);
        let outcome = env.step(s, action, query, rng)?;
        self.apply_update(s, query, outcome.observed_feedback);
        Ok(PgStep {
            action,
            query,
            outcome,
        })
    }

    /// Approval policy gradient: feedback is always about the taken action.
    pub fn approval_pg_step<R: Rng + ?Sized>(
        &mut self,
        env: &Cfmdp,
        s: usize,
        rng: &mut R,
    ) -> Result<PgStep> {
        env.mdp.check_state(s)?;
        let probs = self.policy(s);
        let action = sample_categorical(&probs, rng);
        let outcome = env.step(s, action, action, rng)?;
        self.apply_update(s, action, outcome.observed_feedback);
        Ok(PgStep {
            action,
            query: action,
            outcome,
        })
    }

    pub fn greedy_policy(&self) -> Vec<usize> {
        self.logits.iter().map(|row| argmax(row)).collect()
    }
}

/// Policy `π_z = σ(z) π₁ + (1 − σ(z)) π₂` over two fixed experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePolicyState {
    pub z: f64,
    pub expert_1: QTable,
    pub expert_2: QTable,
    pub learning_rate: f64,
}

impl MixturePolicyState {
    pub fn new(expert_1: QTable, expert_2: QTable, z: f64, learning_rate: f64) -> Result<Self> {
        let m = Self {
            z,
            expert_1,
            expert_2,
            learning_rate,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.expert_1.len() != self.expert_2.len() {
            return Err(Error::config("experts must cover the same states"));
        }
        for (r1, r2) in self.expert_1.iter().zip(&self.expert_2) {
            if r1.len() != r2.len() {
                return Err(Error::config("experts must cover the same actions"));
            }
            for row in [r1, r2] {
                let total: f64 = row.iter().sum();
                if row.iter().any(|p| p.is_nan() || *p < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::config("expert rows must be probability vectors"));
                }
            }
        }
        if !(self.learning_rate > 0.0 && self.z.is_finite()) {
            return Err(Error::config(
                "mixture needs a positive learning rate and finite z",
            ));
        }
        Ok(())
    }

    pub fn policy_at(&self, z: f64, s: usize) -> Vec<f64> {
        let w = sigmoid(z);
        self.expert_1[s]
            .iter()
            .zip(&self.expert_2[s])
            .map(|(p1, p2)| w * p1 + (1.0 - w) * p2)
            .collect()
    }

    pub fn policy(&self, s: usize) -> Vec<f64> {
        self.policy_at(self.z, s)
    }

    /// `d/dz log π_z(k|s) = σ′(z) (π₁(k|s) − π₂(k|s)) / π_z(k|s)`.
    pub fn log_derivative(&self, s: usize, k: usize) -> Result<f64> {
        let pz = self.policy(s)[k];
        if pz <= 0.0 {
            return Err(Error::Numerical(format!(
                "mixture assigns zero probability to query {k} at state {s}"
            )));
        }
        Ok(sigmoid_prime(self.z) * (self.expert_1[s][k] - self.expert_2[s][k]) / pz)
    }

    /// Decoupled approval policy gradient on the mixture parameter.
    pub fn mixture_dapg_step<R: Rng + ?Sized>(
        &mut self,
        env: &Cfmdp,
        s: usize,
        rng: &mut R,
    ) -> Result<PgStep> {
        env.mdp.check_state(s)?;
        let probs = self.policy(s);
        let action = sample_categorical(&probs, rng);
        let query = sample_categorical(&probs, rng);
        let outcome = env.step(s, action, query, rng)?;
        self.z += self.learning_rate * outcome.observed_feedback * self.log_derivative(s, query)?;
        Ok(PgStep {
            action,
            query,
            outcome,
        })
    }
}
