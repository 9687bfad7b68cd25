//! Run configuration: which agent, which environment, and how long.
//!
//! Every struct rejects unknown fields so that a misspelt key in a config
//! document or override fails loudly instead of silently using a default.

use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agents::{
    Agent, AgentKind, AgentState, MixturePolicyState, PgAgentState, QlAgentState,
    DEFAULT_ENTROPY_COEFF, DEFAULT_PG_LEARNING_RATE,
};
use crate::approver::{
    approval_from_q, approval_optimal_policy, train_approver, ApproverMethod, QTable,
};
use crate::error::{Error, Result};
use crate::mdp::{
    make_adversarial, make_example_d1, AdversarialConstruction, Cfmdp, FeedbackTable,
};
use crate::oracle::standard_rl_fixed_point;
use crate::procedural::{generate_procedural, ProceduralParams};

/// Initial Q-values or logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitKind {
    #[default]
    Zeros,
    Constant {
        value: f64,
    },
    /// Independent normal draws per entry.
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// The same row, one value per action, in every state.
    PerAction {
        values: Vec<f64>,
    },
    /// Independent uniform draws per entry.
    Uniform {
        low: f64,
        high: f64,
    },
}

impl InitKind {
    pub fn validate(&self, n_actions: usize) -> Result<()> {
        match self {
            InitKind::Zeros => Ok(()),
            InitKind::Constant { value } if value.is_finite() => Ok(()),
            InitKind::Gaussian { mean, sd } if mean.is_finite() && *sd >= 0.0 && sd.is_finite() => {
                Ok(())
            }
            InitKind::PerAction { values }
                if values.len() == n_actions && values.iter().all(|v| v.is_finite()) =>
            {
                Ok(())
            }
            InitKind::Uniform { low, high }
                if low.is_finite() && high.is_finite() && low <= high =>
            {
                Ok(())
            }
            other => Err(Error::config(format!(
                "invalid initialisation {other:?} for {n_actions} actions"
            ))),
        }
    }

    /// Draws a table row by row. Only the random variants consume `rng`.
    pub fn table<R: Rng + ?Sized>(
        &self,
        n_states: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Result<QTable> {
        self.validate(n_actions)?;
        let mut draw = |_: usize| -> f64 {
            match self {
                InitKind::Zeros => 0.0,
                InitKind::Constant { value } => *value,
                InitKind::Gaussian { mean, sd } => Normal::new(*mean, *sd)
                    .expect("validated normal parameters")
                    .sample(rng),
                InitKind::PerAction { .. } => unreachable!("handled below"),
                InitKind::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            }
        };
        if let InitKind::PerAction { values } = self {
            return Ok(vec![values.clone(); n_states]);
        }
        Ok((0..n_states)
            .map(|_| (0..n_actions).map(&mut draw).collect())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureConfig {
    pub z: f64,
    /// Defaults to the deterministic approval-optimal policy.
    pub expert_1: Option<QTable>,
    /// Defaults to the deterministic fixed point of a learner that treats
    /// corrupted feedback as reward.
    pub expert_2: Option<QTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub kind: AgentKind,
    /// Base Q-learning rate; `None` uses the largest admissible value `1/|A|`.
    pub alpha_init: Option<f64>,
    /// Importance-corrected rates. `None` picks the kind's default: on for
    /// DA-QL, Approval QL and Standard QL, off for DA-QL without IS.
    pub is_correction: Option<bool>,
    /// Bootstrapping discount for Standard QL.
    pub discount: f64,
    pub learning_rate: f64,
    pub entropy_coeff: f64,
    pub init: InitKind,
    pub mixture: MixtureConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::DaQl,
            alpha_init: None,
            is_correction: None,
            discount: 0.0,
            learning_rate: DEFAULT_PG_LEARNING_RATE,
            entropy_coeff: DEFAULT_ENTROPY_COEFF,
            init: InitKind::Zeros,
            mixture: MixtureConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn of_kind(kind: AgentKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn resolved_alpha_init(&self, n_actions: usize) -> f64 {
        self.alpha_init.unwrap_or(1.0 / n_actions as f64)
    }

    pub fn resolved_is_correction(&self) -> bool {
        self.is_correction
            .unwrap_or(self.kind != AgentKind::DaQlNoIs)
    }

    /// Builds the agent for `env`, starting in `s0`. Random initialisations
    /// draw from `rng`.
    pub fn build<R: Rng + ?Sized>(&self, env: &Cfmdp, s0: usize, rng: &mut R) -> Result<Agent> {
        let (ns, na) = (env.n_states(), env.n_actions());
        let state = match self.kind {
            AgentKind::DaQl
            | AgentKind::DaQlNoIs
            | AgentKind::ApprovalQl
            | AgentKind::StandardQl => {
                let decoupled = matches!(self.kind, AgentKind::DaQl | AgentKind::DaQlNoIs);
                let mut q = QlAgentState::new(ns, na, self.resolved_alpha_init(na), s0)
                    .with_flags(decoupled, self.resolved_is_correction())
                    .with_q(self.init.table(ns, na, rng)?);
                q.discount = if self.kind == AgentKind::StandardQl {
                    self.discount
                } else {
                    0.0
                };
                q.validate(env)?;
                AgentState::Ql(q)
            }
            AgentKind::DaPg | AgentKind::ApprovalPg => {
                let p = PgAgentState {
                    logits: self.init.table(ns, na, rng)?,
                    learning_rate: self.learning_rate,
                    entropy_coeff: self.entropy_coeff,
                };
                p.validate(env)?;
                AgentState::Pg(p)
            }
            AgentKind::MixtureDaPg => {
                let one_hot = |policy: Vec<usize>| -> QTable {
                    policy
                        .into_iter()
                        .map(|a| (0..na).map(|k| if k == a { 1.0 } else { 0.0 }).collect())
                        .collect()
                };
                let e1 = self
                    .mixture
                    .expert_1
                    .clone()
                    .unwrap_or_else(|| one_hot(approval_optimal_policy(&env.feedback)));
                let e2 = self
                    .mixture
                    .expert_2
                    .clone()
                    .unwrap_or_else(|| one_hot(standard_rl_fixed_point(env)));
                if e1.len() != ns || e1.iter().any(|r| r.len() != na) {
                    return Err(Error::config(
                        "mixture experts must match the environment shape",
                    ));
                }
                AgentState::Mixture(MixturePolicyState::new(
                    e1,
                    e2,
                    self.mixture.z,
                    self.learning_rate,
                )?)
            }
        };
        Ok(Agent {
            kind: self.kind,
            state,
        })
    }
}

/// Where the approval signal of a procedural environment comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    /// Centred optimal action values of the uncorrupted twin.
    #[default]
    Approval,
    /// The reward table itself.
    Reward,
}

/// Three states and two actions, so the tampering alternative is unique.
pub fn default_adversarial_base() -> ProceduralParams {
    ProceduralParams {
        n_states: 3,
        n_actions: 2,
        ..ProceduralParams::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "source", deny_unknown_fields)]
#[derive(Default)]
pub enum EnvConfig {
    #[default]
    ExampleD1,
    /// A single offset placed on a random base MDP so that a reward-driven
    /// myopic learner prefers `tampering_action` at `target_state`.
    Adversarial {
        #[serde(default = "default_adversarial_base")]
        base: ProceduralParams,
        #[serde(default)]
        base_seed: u64,
        #[serde(default)]
        target_state: usize,
        /// Defaults to the lowest-index action for which the construction
        /// is feasible.
        #[serde(default)]
        tampering_action: Option<usize>,
    },
    Procedural {
        #[serde(default)]
        params: ProceduralParams,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        feedback: FeedbackSource,
        #[serde(default)]
        approver: ApproverMethod,
    },
    File {
        path: PathBuf,
    },
}

/// An environment ready for training, plus what was learned while building it.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltEnv {
    pub cfmdp: Cfmdp,
    /// Whether training redraws the initial state periodically.
    pub episodic: bool,
    pub adversarial: Option<AdversarialConstruction>,
}

/// Builds an adversarial CFMDP on a random base MDP with reward feedback.
pub fn build_adversarial(
    base: &ProceduralParams,
    base_seed: u64,
    target_state: usize,
    tampering_action: Option<usize>,
) -> Result<AdversarialConstruction> {
    let mdp = generate_procedural(base, base_seed)?.twin.mdp;
    let feedback = FeedbackTable::from_reward(&mdp);
    mdp.check_state(target_state)?;
    if let Some(a) = tampering_action {
        return make_adversarial(&mdp, &feedback, target_state, a);
    }
    let a_star = crate::policy::argmax(&feedback.values[target_state]);
    let mut last = None;
    for a in (0..mdp.n_actions).filter(|&a| a != a_star) {
        match make_adversarial(&mdp, &feedback, target_state, a) {
            Ok(c) => return Ok(c),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| {
        Error::Infeasible("a single action admits no tampering alternative".into())
    }))
}

impl EnvConfig {
    pub fn build(&self) -> Result<BuiltEnv> {
        match self {
            EnvConfig::ExampleD1 => Ok(BuiltEnv {
                cfmdp: make_example_d1(),
                episodic: false,
                adversarial: None,
            }),
            EnvConfig::Adversarial {
                base,
                base_seed,
                target_state,
                tampering_action,
            } => {
                let c = build_adversarial(base, *base_seed, *target_state, *tampering_action)?;
                Ok(BuiltEnv {
                    cfmdp: c.cfmdp.clone(),
                    episodic: true,
                    adversarial: Some(c),
                })
            }
            EnvConfig::Procedural {
                params,
                seed,
                feedback,
                approver,
            } => {
                let inst = generate_procedural(params, *seed)?;
                let cfmdp = match feedback {
                    FeedbackSource::Reward => inst.cfmdp,
                    FeedbackSource::Approval => {
                        let q = train_approver(&inst.twin.mdp, *approver)?;
                        Cfmdp::new(inst.cfmdp.mdp, inst.cfmdp.corruption, approval_from_q(&q))?
                    }
                };
                Ok(BuiltEnv {
                    cfmdp,
                    episodic: true,
                    adversarial: None,
                })
            }
            EnvConfig::File { path } => Ok(BuiltEnv {
                cfmdp: Cfmdp::load(path)?,
                episodic: true,
                adversarial: None,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub agent: AgentConfig,
    pub env: EnvConfig,
    pub training_steps: u64,
    pub eval_episodes: u64,
    pub eval_horizon: u64,
    /// Every this many steps a trace row and an agent snapshot are kept.
    pub snapshot_interval: u64,
    /// Steps between redraws of the initial state. `None` uses
    /// `eval_horizon` for episodic environments and never resets otherwise;
    /// `Some(0)` never resets.
    pub reset_interval: Option<u64>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            agent: AgentConfig::default(),
            env: EnvConfig::default(),
            training_steps: 100_000,
            eval_episodes: 100,
            eval_horizon: 50,
            snapshot_interval: 100,
            reset_interval: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("training_steps", self.training_steps),
            ("eval_episodes", self.eval_episodes),
            ("eval_horizon", self.eval_horizon),
            ("snapshot_interval", self.snapshot_interval),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(self.agent.learning_rate)
            || self.agent.entropy_coeff.is_nan()
            || self.agent.entropy_coeff < 0.0
            || !(0.0..1.0).contains(&self.agent.discount)
        {
            return Err(Error::config(
                "agent learning_rate > 0, entropy_coeff ≥ 0 and discount in [0, 1) required",
            ));
        }
        Ok(())
    }

    pub fn resolved_reset_interval(&self, episodic: bool) -> u64 {
        match self.reset_interval {
            Some(n) => n,
            None if episodic => self.eval_horizon,
            None => 0,
        }
    }
}
