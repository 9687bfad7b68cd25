//! Tabular learners for corrupt feedback MDPs.

mod pg;
mod ql;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use pg::{
    MixturePolicyState, PgAgentState, PgStep, DEFAULT_ENTROPY_COEFF, DEFAULT_PG_LEARNING_RATE,
};
pub use ql::{QlAgentState, QlStep};

use crate::error::Result;
use crate::mdp::{Cfmdp, StepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    /// Decoupled approval Q-learning with the importance-sampling correction.
    DaQl,
    /// Decoupled approval Q-learning with rate `α_init / M(s)`.
    DaQlNoIs,
    ApprovalQl,
    /// Reward-driven Q-learning on the corrupted reward.
    StandardQl,
    DaPg,
    ApprovalPg,
    /// Decoupled approval policy gradient over a two-expert mixture.
    MixtureDaPg,
}

impl AgentKind {
    pub const ALL: [AgentKind; 7] = [
        AgentKind::DaQl,
        AgentKind::DaQlNoIs,
        AgentKind::ApprovalQl,
        AgentKind::StandardQl,
        AgentKind::DaPg,
        AgentKind::ApprovalPg,
        AgentKind::MixtureDaPg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::DaQl => "da-ql",
            AgentKind::DaQlNoIs => "da-ql-no-is",
            AgentKind::ApprovalQl => "approval-ql",
            AgentKind::StandardQl => "standard-ql",
            AgentKind::DaPg => "da-pg",
            AgentKind::ApprovalPg => "approval-pg",
            AgentKind::MixtureDaPg => "mixture-da-pg",
        }
    }

    pub fn is_q_learner(self) -> bool {
        matches!(
            self,
            AgentKind::DaQl | AgentKind::DaQlNoIs | AgentKind::ApprovalQl | AgentKind::StandardQl
        )
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| crate::error::Error::config(format!("unknown agent kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum AgentState {
    Ql(QlAgentState),
    Pg(PgAgentState),
    Mixture(MixturePolicyState),
}

/// Uniform view over the agent-specific step results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentStep {
    pub action: usize,
    pub query: usize,
    /// Q-learning rate applied this step; `None` for policy-gradient agents.
    pub rate: Option<f64>,
    pub outcome: StepOutcome,
}

impl From<QlStep> for AgentStep {
    fn from(s: QlStep) -> Self {
        Self {
            action: s.action,
            query: s.query,
            rate: Some(s.rate),
            outcome: s.outcome,
        }
    }
}

impl From<PgStep> for AgentStep {
    fn from(s: PgStep) -> Self {
        Self {
            action: s.action,
            query: s.query,
            rate: None,
            outcome: s.outcome,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub kind: AgentKind,
    pub state: AgentState,
}

impl Agent {
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        env: &Cfmdp,
        s: usize,
        rng: &mut R,
    ) -> Result<AgentStep> {
        Ok(match (&mut self.state, self.kind) {
            (AgentState::Ql(q), AgentKind::DaQl | AgentKind::DaQlNoIs) => {
                q.daql_step(env, s, rng)?.into()
            }
            (AgentState::Ql(q), AgentKind::ApprovalQl) => q.approval_ql_step(env, s, rng)?.into(),
            (AgentState::Ql(q), AgentKind::StandardQl) => q.standard_ql_step(env, s, rng)?.into(),
            (AgentState::Pg(p), AgentKind::DaPg) => p.dapg_step(env, s, rng)?.into(),
            (AgentState::Pg(p), AgentKind::ApprovalPg) => p.approval_pg_step(env, s, rng)?.into(),
            (AgentState::Mixture(m), AgentKind::MixtureDaPg) => {
                m.mixture_dapg_step(env, s, rng)?.into()
            }
            (_, kind) => {
                return Err(crate::error::Error::config(format!(
                    "agent state does not match kind {kind}"
                )));
            }
        })
    }

    /// Called when the environment is reset into `s` outside of a transition.
    pub fn note_arrival(&mut self, s: usize) {
        if let AgentState::Ql(q) = &mut self.state {
            q.note_arrival(s);
        }
    }

    /// Deterministic policy read off the agent's parameters.
    pub fn greedy_policy(&self) -> Vec<usize> {
        match &self.state {
            AgentState::Ql(q) => q.greedy_policy(),
            AgentState::Pg(p) => p.greedy_policy(),
            AgentState::Mixture(m) => (0..m.expert_1.len())
                .map(|s| crate::policy::argmax(&m.policy(s)))
                .collect(),
        }
    }

    /// Whether the agent currently prefers `desired` over `other` at `s`:
    /// a strictly larger Q-value, or a policy probability above one half.
    pub fn favors(&self, s: usize, desired: usize, other: usize) -> bool {
        match &self.state {
            AgentState::Ql(q) => q.q[s][desired] > q.q[s][other],
            AgentState::Pg(p) => p.policy(s)[desired] > 0.5,
            AgentState::Mixture(m) => m.policy(s)[desired] > 0.5,
        }
    }

    /// Q-values or logits, for snapshots and convergence measurements.
    pub fn table(&self) -> Vec<Vec<f64>> {
        match &self.state {
            AgentState::Ql(q) => q.q.clone(),
            AgentState::Pg(p) => p.logits.clone(),
            AgentState::Mixture(m) => (0..m.expert_1.len()).map(|s| m.policy(s)).collect(),
        }
    }
}
