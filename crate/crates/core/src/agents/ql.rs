//! Tabular Q-learning agents driven by (possibly corrupted) feedback:
//! decoupled approval Q-learning with and without the importance-sampling
//! correction, coupled approval Q-learning, and standard reward Q-learning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approver::QTable;
use crate::error::{Error, Result};
use crate::mdp::{Cfmdp, StepOutcome};
use crate::policy::{argmax, epsilon_greedy, sample_categorical};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QlAgentState {
    pub q: QTable,
    /// Arrivals per state, including the initial state.
    pub visit_counts: Vec<u64>,
    pub alpha_init: f64,
    pub decoupled: bool,
    pub is_correction: bool,
    /// Bootstrapping discount, used only by [`QlAgentState::standard_ql_step`].
    pub discount: f64,
}

/// One agent-environment interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QlStep {
    pub action: usize,
    pub query: usize,
    /// Learning rate applied to `Q[s][query]`.
    pub rate: f64,
    pub outcome: StepOutcome,
}

impl QlAgentState {
    /// Zero-initialised values with `M(initial_state) = 1`.
    pub fn new(n_states: usize, n_actions: usize, alpha_init: f64, initial_state: usize) -> Self {
        let mut visit_counts = vec![0; n_states];
        visit_counts[initial_state] = 1;
        Self {
            q: vec![vec![0.0; n_actions]; n_states],
            visit_counts,
            alpha_init,
            decoupled: true,
            is_correction: true,
            discount: 0.0,
        }
    }

    pub fn with_flags(mut self, decoupled: bool, is_correction: bool) -> Self {
        self.decoupled = decoupled;
        self.is_correction = is_correction;
        self
    }

    pub fn with_q(mut self, q: QTable) -> Self {
        self.q = q;
        self
    }

    pub fn n_actions(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    /// Checks `0 < α_init ≤ 1/|A|` and the table shape against `env`.
    pub fn validate(&self, env: &Cfmdp) -> Result<()> {
        let na = env.n_actions();
        if self.q.len() != env.n_states() || self.q.iter().any(|r| r.len() != na) {
            return Err(Error::config(
                "Q table shape does not match the environment",
            ));
        }
        if self.visit_counts.len() != env.n_states() {
            return Err(Error::config("visit counts must have one entry per state"));
        }
        let max_alpha = 1.0 / na as f64;
        if !(self.alpha_init > 0.0 && self.alpha_init <= max_alpha) {
            return Err(Error::config(format!(
                "alpha_init = {} must lie in (0, 1/|A|] = (0, {max_alpha}]",
                self.alpha_init
            )));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::config(format!(
                "discount {} outside [0, 1)",
                self.discount
            )));
        }
        Ok(())
    }

    pub fn note_arrival(&mut self, s: usize) {
        self.visit_counts[s] += 1;
    }

    fn visits(&self, s: usize) -> Result<f64> {
        match self.visit_counts.get(s) {
            Some(&m) if m >= 1 => Ok(m as f64),
            Some(_) => Err(Error::config(format!(
                "visit count of state {s} is zero at update time"
            ))),
            None => Err(Error::input(format!("state {s} out of range"))),
        }
    }

    /// Taken-action policy: ε-greedy with `ε = 1/M(s)`.
    pub fn action_policy(&self, s: usize) -> Result<Vec<f64>> {
        Ok(epsilon_greedy(&self.q[s], 1.0 / self.visits(s)?))
    }

    /// Query policy: ε-greedy with `ε = max(1/M(s), α_init |A|)`, clipped to 1.
    pub fn query_policy(&self, s: usize) -> Result<Vec<f64>> {
        let eps = (1.0 / self.visits(s)?).max(self.alpha_init * self.n_actions() as f64);
        Ok(epsilon_greedy(&self.q[s], eps))
    }

    /// Importance-corrected rate `α_init / (M(s) π_K(k|s))`.
    fn corrected_rate(&self, s: usize, prob: f64) -> Result<f64> {
        Ok(self.alpha_init / (self.visits(s)? * prob))
    }

    fn plain_rate(&self, s: usize) -> Result<f64> {
        Ok(self.alpha_init / self.visits(s)?)
    }

    fn blend(&mut self, s: usize, k: usize, rate: f64, target: f64) {
        let q = &mut self.q[s][k];
        *q = (1.0 - rate) * *q + rate * target;
    }

    /// Decoupled approval Q-learning: action and query drawn independently.
    pub fn daql_step<R: Rng + ?Sized>(
        &mut self,
        env: &Cfmdp,
        s: usize,
        rng: &mut R,
    ) -> Result<QlStep> {
        env.mdp.check_state(s)?;
        let pi_a = self.action_policy(s)?;
        let pi_k = self.query_policy(s)?;
        let action = sample_categorical(&pi_a, rng);
        let query = sample_categorical(&pi_k, rng);
        let rate = if self.is_correction {
            self.corrected_rate(s, pi_k[query])?
        } else {
            self.plain_rate(s)?
        };
        let outcome = env.step(s, action, query, rng)?;
        self.blend(s, query, rate, outcome.observed_feedback);
        self.note_arrival(outcome.next_state);
        Ok(QlStep {
            action,
            query,
            rate,
            outcome,
        })
    }

    /// Draws the single coupled action. With the correction flag the floored
    /// query policy is used so the corrected rate stays in `[0, 1]`.
    fn coupled_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Result<(usize, f64)> {
        if self.is_correction {
            let pi = self.query_policy(s)?;
            let a = sample_categorical(&pi, rng);
            Ok((a, self.corrected_rate(s, pi[a])?))
        } else {
            let pi = self.action_policy(s)?;
            Ok((sample_categorical(&pi, rng), self.plain_rate(s)?))
        }
    }

    /// Approval Q-learning: the query is always the taken action.
    pub fn approval_ql_step<R: Rng + ?Sized>(
        &mut self,
        env: &Cfmdp,
        s: usize,
        rng: &mut R,
    ) -> Result<QlStep> {
        env.mdp.check_state(s)?;
        let (action, rate) = self.coupled_action(s, rng)?;
        let outcome = env.step(s, action, action, rng)?;
        self.blend(s, action, rate, outcome.observed_feedback);
        self.note_arrival(outcome.next_state);
        Ok(QlStep {
            action,
            query: action,
            rate,
            outcome,
        })
    }

    /// Standard reward Q-learning on the corrupted reward `r(s,a) + c_{s'}`,
    /// bootstrapping with `discount`.
    pub fn standard_ql_step<R: Rng + ?Sized>(
        &mut self,
        env: &Cfmdp,
        s: usize,
        rng: &mut R,
    ) -> Result<QlStep> {
        env.mdp.check_state(s)?;
        let (action, rate) = self.coupled_action(s, rng)?;
        let outcome = env.step_reward(s, action, rng)?;
        let next = &self.q[outcome.next_state];
        let target = outcome.observed_feedback + self.discount * next[argmax(next)];
        self.blend(s, action, rate, target);
        self.note_arrival(outcome.next_state);
        Ok(QlStep {
            action,
            query: action,
            rate,
            outcome,
        })
    }

    pub fn greedy_policy(&self) -> Vec<usize> {
        self.q.iter().map(|row| argmax(row)).collect()
    }
}
