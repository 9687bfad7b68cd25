//! The training loop, with checkpoints that resume bit-exactly.

use serde::{Deserialize, Serialize};

use super::config::{BuiltEnv, RunConfig};
use super::eval::eval_policy;
use super::monitor::InvariantMonitor;
use super::record::{RunRecord, RunSummary, Snapshot, TraceRow};
use crate::agents::{Agent, AgentKind, AgentStep};
use crate::approver::approval_optimal_policy;
use crate::error::{Error, Result};
use crate::mdp::{Cfmdp, FeedbackTable};
use crate::oracle::convergence_gap;
use crate::rng::{derive_seed, stream, SimRng};

/// Everything needed to continue a run; the environment is rebuilt from
/// the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub state: usize,
    pub agent: Agent,
    pub rng: SimRng,
    pub monitor: InvariantMonitor,
    pub trace: Vec<TraceRow>,
    pub snapshots: Vec<Snapshot>,
}

pub struct Trainer {
    config: RunConfig,
    env: BuiltEnv,
    reset_interval: u64,
    step: u64,
    state: usize,
    agent: Agent,
    rng: SimRng,
    monitor: InvariantMonitor,
    trace: Vec<TraceRow>,
    snapshots: Vec<Snapshot>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let env = config.env.build()?;
        let mut rng = stream(config.seed, 0);
        let state = env.cfmdp.sample_initial_state(&mut rng);
        let agent = config.agent.build(&env.cfmdp, state, &mut rng)?;
        let monitor = InvariantMonitor::new(&agent);
        let snapshots = vec![Snapshot {
            step: 0,
            table: agent.table(),
        }];
        Ok(Self::assemble(
            config,
            env,
            0,
            state,
            agent,
            rng,
            monitor,
            Vec::new(),
            snapshots,
        ))
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let env = ckpt.config.env.build()?;
        if ckpt.agent.kind != ckpt.config.agent.kind {
            return Err(Error::config("checkpoint agent does not match its config"));
        }
        Ok(Self::assemble(
            ckpt.config,
            env,
            ckpt.step,
            ckpt.state,
            ckpt.agent,
            ckpt.rng,
            ckpt.monitor,
            ckpt.trace,
            ckpt.snapshots,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: RunConfig,
        env: BuiltEnv,
        step: u64,
        state: usize,
        agent: Agent,
        rng: SimRng,
        monitor: InvariantMonitor,
        trace: Vec<TraceRow>,
        snapshots: Vec<Snapshot>,
    ) -> Self {
        let reset_interval = config.resolved_reset_interval(env.episodic);
        Self {
            config,
            env,
            reset_interval,
            step,
            state,
            agent,
            rng,
            monitor,
            trace,
            snapshots,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            state: self.state,
            agent: self.agent.clone(),
            rng: self.rng.clone(),
            monitor: self.monitor.clone(),
            trace: self.trace.clone(),
            snapshots: self.snapshots.clone(),
        }
    }

    pub fn env(&self) -> &Cfmdp {
        &self.env.cfmdp
    }

    pub fn built_env(&self) -> &BuiltEnv {
        &self.env
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// State the next step acts in.
    pub fn current_state(&self) -> usize {
        self.state
    }

    /// One agent step, with invariant checks and thinned logging. A due
    /// reset is applied after the step, so [`Trainer::current_state`] is
    /// always where the next step starts.
    pub fn step_once(&mut self) -> Result<AgentStep> {
        let s = self.state;
        let out = self.agent.step(&self.env.cfmdp, s, &mut self.rng)?;
        self.monitor.observe(&self.agent, s, &out)?;
        self.step += 1;
        if self.step.is_multiple_of(self.config.snapshot_interval) {
            self.trace.push(TraceRow {
                step: self.step,
                s,
                a: out.action,
                k: out.query,
                true_feedback: out.outcome.true_feedback,
                observed: out.outcome.observed_feedback,
                corruption: out.outcome.corruption,
            });
            self.snapshots.push(Snapshot {
                step: self.step,
                table: self.agent.table(),
            });
        }
        self.state = out.outcome.next_state;
        if self.reset_interval > 0 && self.step.is_multiple_of(self.reset_interval) {
            self.state = self.env.cfmdp.sample_initial_state(&mut self.rng);
            self.agent.note_arrival(self.state);
        }
        Ok(out)
    }

    pub fn run_until(&mut self, step: u64) -> Result<()> {
        while self.step < step {
            self.step_once()?;
        }
        Ok(())
    }

    /// The table the convergence gap is measured against, when meaningful.
    fn gap_target(&self) -> Option<FeedbackTable> {
        match (&self.agent.state, self.agent.kind) {
            (crate::agents::AgentState::Ql(q), AgentKind::StandardQl) if q.discount == 0.0 => {
                Some(FeedbackTable::from_reward(&self.env.cfmdp.mdp))
            }
            (_, AgentKind::DaQl | AgentKind::DaQlNoIs | AgentKind::ApprovalQl) => {
                Some(self.env.cfmdp.feedback.clone())
            }
            _ => None,
        }
    }

    pub fn finish(&self) -> RunRecord {
        let greedy = self.agent.greedy_policy();
        let eval = eval_policy(
            &self.env.cfmdp,
            &greedy,
            self.config.eval_episodes,
            self.config.eval_horizon,
            derive_seed(self.config.seed, 1),
        );
        let convergence_gap = self
            .gap_target()
            .map(|fb| convergence_gap(&self.agent.table(), &fb));
        RunRecord {
            config: self.config.clone(),
            trace: self.trace.clone(),
            snapshots: self.snapshots.clone(),
            summary: RunSummary {
                steps: self.step,
                greedy_policy: greedy,
                approval_optimal_policy: approval_optimal_policy(&self.env.cfmdp.feedback),
                convergence_gap,
                eval,
                invariant_checks: self.monitor.steps_checked,
            },
        }
    }
}

/// Builds, trains for `training_steps` and evaluates.
pub fn run_training(config: &RunConfig) -> Result<RunRecord> {
    let mut t = Trainer::new(config.clone())?;
    t.run_until(config.training_steps)?;
    Ok(t.finish())
}
