//! The tabular experiments: the two-state example with its initialisation
//! variants, the procedural CFMDP sweep, convergence of DA-QL, and the
//! adversarial construction.
//!
//! Runs are fanned out with rayon on the caller's thread pool and collected
//! in index order, so reports do not depend on the number of workers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{
    build_adversarial, default_adversarial_base, AgentConfig, EnvConfig, FeedbackSource, InitKind,
    RunConfig,
};
use super::eval::eval_policy;
use super::train::Trainer;
use crate::agents::{AgentKind, AgentState};
use crate::approver::{approval_optimal_policy, ApproverMethod};
use crate::error::Result;
use crate::oracle::{convergence_gap, min_feedback_gap, standard_rl_fixed_point};
use crate::procedural::ProceduralParams;
use crate::rng::derive_seed;

/// Desired and tampering actions of the two-state example.
const DESIRED: usize = 0;
const TAMPERING: usize = 1;

fn d1_run_config(agent: AgentConfig, steps: u64, seed: u64) -> RunConfig {
    RunConfig {
        agent,
        env: EnvConfig::ExampleD1,
        training_steps: steps,
        eval_episodes: 1,
        eval_horizon: 1,
        snapshot_interval: steps,
        reset_interval: Some(0),
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct D1Config {
    pub runs: u64,
    pub steps: u64,
    pub seed: u64,
    pub agents: Vec<AgentKind>,
    pub alpha_init: f64,
    pub learning_rate: f64,
    pub entropy_coeff: f64,
    /// Standard deviation of the Gaussian initialisation (mean 0).
    pub init_sd: f64,
    /// A run counts when the desired action is favoured on more than this
    /// fraction of its steps.
    pub favored_threshold: f64,
    /// Steps between learning-curve points.
    pub curve_interval: u64,
}

impl Default for D1Config {
    fn default() -> Self {
        Self {
            runs: 100,
            steps: 100_000,
            seed: 0,
            agents: vec![
                AgentKind::DaQl,
                AgentKind::DaQlNoIs,
                AgentKind::ApprovalQl,
                AgentKind::DaPg,
                AgentKind::ApprovalPg,
            ],
            alpha_init: 0.3,
            learning_rate: 0.02,
            entropy_coeff: 0.5,
            init_sd: 3.0,
            favored_threshold: 0.8,
            curve_interval: 1000,
        }
    }
}

impl D1Config {
    pub fn agent_config(&self, kind: AgentKind) -> AgentConfig {
        AgentConfig {
            kind,
            alpha_init: Some(self.alpha_init),
            learning_rate: self.learning_rate,
            entropy_coeff: self.entropy_coeff,
            init: InitKind::Gaussian {
                mean: 0.0,
                sd: self.init_sd,
            },
            ..AgentConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct D1AgentResult {
    pub agent: AgentKind,
    /// Fraction of runs favouring the desired action on more than the
    /// threshold fraction of steps.
    pub fraction_of_runs: f64,
    /// Per run, the fraction of steps on which the desired action was favoured.
    pub favored_per_run: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct D1Report {
    pub config: D1Config,
    pub agents: Vec<D1AgentResult>,
}

/// One learning-curve point: the agent's values at the visited state.
/// For Q-learners these are `Q(s, x⁰)` and `Q(s, x¹)`, for policy-gradient
/// agents the action probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub agent: AgentKind,
    pub run: u64,
    pub step: u64,
    pub s: usize,
    pub value_x0: f64,
    pub value_x1: f64,
}

fn curve_values(agent: &crate::agents::Agent, s: usize) -> (f64, f64) {
    match &agent.state {
        AgentState::Ql(q) => (q.q[s][DESIRED], q.q[s][TAMPERING]),
        AgentState::Pg(p) => {
            let pi = p.policy(s);
            (pi[DESIRED], pi[TAMPERING])
        }
        AgentState::Mixture(m) => {
            let pi = m.policy(s);
            (pi[DESIRED], pi[TAMPERING])
        }
    }
}

/// Fraction of steps favouring the desired action, plus the learning curve.
fn d1_single(cfg: &D1Config, kind: AgentKind, run: u64) -> Result<(f64, Vec<CurvePoint>)> {
    let rc = d1_run_config(
        cfg.agent_config(kind),
        cfg.steps,
        derive_seed(cfg.seed, run),
    );
    let mut t = Trainer::new(rc)?;
    let mut favored = 0u64;
    let mut curve = Vec::new();
    while t.step_count() < cfg.steps {
        let s = t.current_state();
        if t.agent().favors(s, DESIRED, TAMPERING) {
            favored += 1;
        }
        if cfg.curve_interval > 0 && t.step_count() % cfg.curve_interval == 0 {
            let (value_x0, value_x1) = curve_values(t.agent(), s);
            curve.push(CurvePoint {
                agent: kind,
                run,
                step: t.step_count(),
                s,
                value_x0,
                value_x1,
            });
        }
        t.step_once()?;
    }
    Ok((favored as f64 / cfg.steps as f64, curve))
}

/// Runs every configured agent `runs` times on the two-state example.
/// Runs with the same index share a seed, hence the same initial values.
pub fn experiment_d1(cfg: &D1Config) -> Result<(D1Report, Vec<CurvePoint>)> {
    let jobs: Vec<(AgentKind, u64)> = cfg
        .agents
        .iter()
        .flat_map(|&k| (0..cfg.runs).map(move |r| (k, r)))
        .collect();
    let results: Vec<(f64, Vec<CurvePoint>)> = jobs
        .par_iter()
        .map(|&(k, r)| d1_single(cfg, k, r))
        .collect::<Result<_>>()?;
    let mut agents = Vec::new();
    let mut curves = Vec::new();
    for (i, &kind) in cfg.agents.iter().enumerate() {
        let chunk = &results[i * cfg.runs as usize..(i + 1) * cfg.runs as usize];
        let favored_per_run: Vec<f64> = chunk.iter().map(|(f, _)| *f).collect();
        let good = favored_per_run
            .iter()
            .filter(|&&f| f > cfg.favored_threshold)
            .count();
        agents.push(D1AgentResult {
            agent: kind,
            fraction_of_runs: good as f64 / cfg.runs.max(1) as f64,
            favored_per_run,
        });
        curves.extend(chunk.iter().flat_map(|(_, c)| c.iter().copied()));
    }
    Ok((
        D1Report {
            config: cfg.clone(),
            agents,
        },
        curves,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct D1FavorableConfig {
    pub runs: u64,
    pub steps: u64,
    pub seed: u64,
    pub agents: Vec<AgentKind>,
    pub alpha_init: f64,
    /// Initial values of the desired and the tampering action.
    pub init: Vec<f64>,
}

impl Default for D1FavorableConfig {
    fn default() -> Self {
        Self {
            runs: 100,
            steps: 100_000,
            seed: 0,
            agents: vec![AgentKind::DaQlNoIs, AgentKind::ApprovalQl, AgentKind::DaQl],
            alpha_init: 0.3,
            init: vec![0.0, -1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct D1FavorableResult {
    pub agent: AgentKind,
    /// Fraction of runs whose final greedy action at the start state is the
    /// desired one.
    pub fraction_desired: f64,
    pub fraction_tampering: f64,
    pub final_actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct D1FavorableReport {
    pub config: D1FavorableConfig,
    pub agents: Vec<D1FavorableResult>,
}

/// Starts Q-learners with the desired action ahead and reports where their
/// greedy policy at the start state ends up.
pub fn experiment_d1_favorable(cfg: &D1FavorableConfig) -> Result<D1FavorableReport> {
    let jobs: Vec<(AgentKind, u64)> = cfg
        .agents
        .iter()
        .flat_map(|&k| (0..cfg.runs).map(move |r| (k, r)))
        .collect();
    let finals: Vec<usize> = jobs
        .par_iter()
        .map(|&(kind, run)| {
            let agent = AgentConfig {
                kind,
                alpha_init: Some(cfg.alpha_init),
                init: InitKind::PerAction {
                    values: cfg.init.clone(),
                },
                ..AgentConfig::default()
            };
            let mut t = Trainer::new(d1_run_config(agent, cfg.steps, derive_seed(cfg.seed, run)))?;
            t.run_until(cfg.steps)?;
            Ok(t.agent().greedy_policy()[0])
        })
        .collect::<Result<_>>()?;
    let n = cfg.runs as usize;
    let agents = cfg
        .agents
        .iter()
        .enumerate()
        .map(|(i, &agent)| {
            let final_actions = finals[i * n..(i + 1) * n].to_vec();
            let frac = |a: usize| {
                final_actions.iter().filter(|&&x| x == a).count() as f64 / n.max(1) as f64
            };
            D1FavorableResult {
                agent,
                fraction_desired: frac(DESIRED),
                fraction_tampering: frac(TAMPERING),
                final_actions,
            }
        })
        .collect();
    Ok(D1FavorableReport {
        config: cfg.clone(),
        agents,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProceduralConfig {
    pub count: u64,
    pub params: ProceduralParams,
    pub seed: u64,
    pub agents: Vec<AgentKind>,
    pub steps: u64,
    pub eval_episodes: u64,
    pub eval_horizon: u64,
    /// Success means true return at least this multiple of the approver's.
    pub success_ratio: f64,
    pub learning_rate: f64,
    pub entropy_coeff: f64,
    pub approver: ApproverMethod,
}

impl Default for ProceduralConfig {
    fn default() -> Self {
        Self {
            count: 200,
            params: ProceduralParams::default(),
            seed: 0,
            agents: vec![
                AgentKind::DaPg,
                AgentKind::ApprovalPg,
                AgentKind::DaQl,
                AgentKind::StandardQl,
            ],
            steps: 20_000,
            eval_episodes: 100,
            eval_horizon: 50,
            success_ratio: 0.8,
            learning_rate: 0.01,
            entropy_coeff: 0.01,
            approver: ApproverMethod::ValueIteration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralAgentOutcome {
    pub agent: AgentKind,
    pub true_return: f64,
    pub success: bool,
    /// Per-step observed (corrupted) approval under the greedy policy.
    pub observed_approval: f64,
    pub true_approval: f64,
    pub excess_corruption: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralInstanceResult {
    pub index: u64,
    pub env_seed: u64,
    pub approver_return: f64,
    pub outcomes: Vec<ProceduralAgentOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralAgentSummary {
    pub agent: AgentKind,
    pub success_rate: f64,
    pub mean_observed_approval: f64,
    pub mean_true_approval: f64,
    pub mean_true_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralReport {
    pub config: ProceduralConfig,
    pub agents: Vec<ProceduralAgentSummary>,
    pub instances: Vec<ProceduralInstanceResult>,
}

impl ProceduralConfig {
    fn run_config(&self, kind: AgentKind, env_seed: u64, run_seed: u64) -> RunConfig {
        RunConfig {
            agent: AgentConfig {
                kind,
                learning_rate: self.learning_rate,
                entropy_coeff: self.entropy_coeff,
                discount: if kind == AgentKind::StandardQl {
                    self.params.discount
                } else {
                    0.0
                },
                ..AgentConfig::default()
            },
            env: EnvConfig::Procedural {
                params: self.params.clone(),
                seed: env_seed,
                feedback: FeedbackSource::Approval,
                approver: self.approver,
            },
            training_steps: self.steps,
            eval_episodes: self.eval_episodes,
            eval_horizon: self.eval_horizon,
            snapshot_interval: self.steps,
            reset_interval: None,
            seed: run_seed,
        }
    }
}

fn procedural_instance(cfg: &ProceduralConfig, index: u64) -> Result<ProceduralInstanceResult> {
    let env_seed = derive_seed(cfg.seed, index);
    let eval_seed = derive_seed(env_seed, u64::MAX);
    let mut approver_return = None;
    let mut outcomes = Vec::new();
    for (j, &kind) in cfg.agents.iter().enumerate() {
        let mut t = Trainer::new(cfg.run_config(kind, env_seed, derive_seed(env_seed, j as u64)))?;
        t.run_until(cfg.steps)?;
        let env = t.env();
        let base = *approver_return.get_or_insert_with(|| {
            let pi = approval_optimal_policy(&env.feedback);
            eval_policy(env, &pi, cfg.eval_episodes, cfg.eval_horizon, eval_seed).mean_true_return
        });
        let ev = eval_policy(
            env,
            &t.agent().greedy_policy(),
            cfg.eval_episodes,
            cfg.eval_horizon,
            eval_seed,
        );
        outcomes.push(ProceduralAgentOutcome {
            agent: kind,
            true_return: ev.mean_true_return,
            success: ev.mean_true_return >= cfg.success_ratio * base,
            observed_approval: ev.mean_observed_feedback,
            true_approval: ev.mean_true_feedback,
            excess_corruption: ev.tampering.excess,
        });
    }
    Ok(ProceduralInstanceResult {
        index,
        env_seed,
        approver_return: approver_return.unwrap_or(0.0),
        outcomes,
    })
}

/// Trains each agent on `count` procedural CFMDPs with approval feedback
/// from the uncorrupted twin, and compares greedy-policy true return with
/// the approver's.
pub fn experiment_procedural(cfg: &ProceduralConfig) -> Result<ProceduralReport> {
    let instances: Vec<ProceduralInstanceResult> = (0..cfg.count)
        .into_par_iter()
        .map(|i| procedural_instance(cfg, i))
        .collect::<Result<_>>()?;
    let n = instances.len().max(1) as f64;
    let agents = cfg
        .agents
        .iter()
        .enumerate()
        .map(|(j, &agent)| {
            let col = || instances.iter().map(move |inst| &inst.outcomes[j]);
            ProceduralAgentSummary {
                agent,
                success_rate: col().filter(|o| o.success).count() as f64 / n,
                mean_observed_approval: col().map(|o| o.observed_approval).sum::<f64>() / n,
                mean_true_approval: col().map(|o| o.true_approval).sum::<f64>() / n,
                mean_true_return: col().map(|o| o.true_return).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(ProceduralReport {
        config: cfg.clone(),
        agents,
        instances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Number of procedural CFMDPs, in addition to the two-state example.
    pub count: u64,
    pub params: ProceduralParams,
    pub seed: u64,
    pub d1_steps: u64,
    pub procedural_steps: u64,
    /// `None` uses `1/|A|`.
    pub alpha_init: Option<f64>,
    pub threshold: f64,
    /// The greedy policy must match on instances whose smallest feedback
    /// gap exceeds this.
    pub min_gap: f64,
    /// Steps between recorded convergence-gap values.
    pub gap_interval: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            count: 20,
            params: ProceduralParams::default(),
            seed: 0,
            d1_steps: 100_000,
            procedural_steps: 20_000,
            alpha_init: None,
            threshold: 0.05,
            min_gap: 0.1,
            gap_interval: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceInstance {
    pub label: String,
    pub steps: u64,
    pub final_gap: f64,
    pub min_feedback_gap: f64,
    pub greedy_matches: bool,
    pub policy_required: bool,
    pub passed: bool,
    /// `(step, gap)` every `gap_interval` steps.
    pub gap_curve: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config: ConvergenceConfig,
    pub instances: Vec<ConvergenceInstance>,
    pub all_passed: bool,
}

fn convergence_instance(
    cfg: &ConvergenceConfig,
    label: String,
    rc: RunConfig,
) -> Result<ConvergenceInstance> {
    let steps = rc.training_steps;
    let mut t = Trainer::new(rc)?;
    let feedback = t.env().feedback.clone();
    let mut gap_curve = Vec::new();
    while t.step_count() < steps {
        t.step_once()?;
        if cfg.gap_interval > 0 && t.step_count() % cfg.gap_interval == 0 {
            gap_curve.push((
                t.step_count(),
                convergence_gap(&t.agent().table(), &feedback),
            ));
        }
    }
    let final_gap = convergence_gap(&t.agent().table(), &feedback);
    let min_gap = min_feedback_gap(&feedback);
    let greedy_matches = t.agent().greedy_policy() == approval_optimal_policy(&feedback);
    let policy_required = min_gap > cfg.min_gap;
    Ok(ConvergenceInstance {
        label,
        steps,
        final_gap,
        min_feedback_gap: min_gap,
        greedy_matches,
        policy_required,
        passed: final_gap < cfg.threshold && (greedy_matches || !policy_required),
        gap_curve,
    })
}

/// DA-QL on the two-state example and on `count` procedural approval
/// CFMDPs; reports the final convergence gap and greedy-policy agreement.
pub fn experiment_convergence(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    let agent = AgentConfig {
        kind: AgentKind::DaQl,
        alpha_init: cfg.alpha_init,
        ..AgentConfig::default()
    };
    let mut jobs = vec![(
        "example-d1".to_string(),
        d1_run_config(agent.clone(), cfg.d1_steps, derive_seed(cfg.seed, u64::MAX)),
    )];
    for i in 0..cfg.count {
        let env_seed = derive_seed(cfg.seed, i);
        jobs.push((
            format!("procedural-{i}"),
            RunConfig {
                agent: agent.clone(),
                env: EnvConfig::Procedural {
                    params: cfg.params.clone(),
                    seed: env_seed,
                    feedback: FeedbackSource::Approval,
                    approver: ApproverMethod::ValueIteration,
                },
                training_steps: cfg.procedural_steps,
                snapshot_interval: cfg.procedural_steps,
                seed: derive_seed(env_seed, 0),
                ..RunConfig::default()
            },
        ));
    }
    let instances: Vec<ConvergenceInstance> = jobs
        .into_par_iter()
        .map(|(label, rc)| convergence_instance(cfg, label, rc))
        .collect::<Result<_>>()?;
    let all_passed = instances.iter().all(|i| i.passed);
    Ok(ConvergenceReport {
        config: cfg.clone(),
        instances,
        all_passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    pub count: u64,
    pub base: ProceduralParams,
    pub seed: u64,
    pub steps: u64,
    pub target_state: usize,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            count: 50,
            base: default_adversarial_base(),
            seed: 0,
            steps: 100_000,
            target_state: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialInstance {
    pub base_seed: u64,
    pub optimal_action: usize,
    pub tampering_action: usize,
    pub offset: f64,
    pub fixed_point_action: usize,
    pub standard_action: usize,
    pub daql_action: usize,
    /// Standard QL ends at the fixed point, which is the tampering action.
    pub standard_tampers: bool,
    pub daql_optimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialReport {
    pub config: AdversarialConfig,
    pub instances: Vec<AdversarialInstance>,
    pub standard_fraction: f64,
    pub daql_fraction: f64,
}

fn adversarial_instance(cfg: &AdversarialConfig, index: u64) -> Result<AdversarialInstance> {
    let base_seed = derive_seed(cfg.seed, index);
    let c = build_adversarial(&cfg.base, base_seed, cfg.target_state, None)?;
    let env = EnvConfig::Adversarial {
        base: cfg.base.clone(),
        base_seed,
        target_state: cfg.target_state,
        tampering_action: Some(c.tampering_action),
    };
    let final_action = |kind: AgentKind, stream: u64| -> Result<usize> {
        let rc = RunConfig {
            agent: AgentConfig::of_kind(kind),
            env: env.clone(),
            training_steps: cfg.steps,
            snapshot_interval: cfg.steps,
            seed: derive_seed(base_seed, stream),
            ..RunConfig::default()
        };
        let mut t = Trainer::new(rc)?;
        t.run_until(cfg.steps)?;
        Ok(t.agent().greedy_policy()[cfg.target_state])
    };
    let fixed_point_action = standard_rl_fixed_point(&c.cfmdp)[cfg.target_state];
    let standard_action = final_action(AgentKind::StandardQl, 0)?;
    let daql_action = final_action(AgentKind::DaQl, 1)?;
    Ok(AdversarialInstance {
        base_seed,
        optimal_action: c.optimal_action,
        tampering_action: c.tampering_action,
        offset: c.offset,
        fixed_point_action,
        standard_action,
        daql_action,
        standard_tampers: standard_action == fixed_point_action
            && fixed_point_action == c.tampering_action
            && standard_action != c.optimal_action,
        daql_optimal: daql_action == c.optimal_action,
    })
}

/// Myopic Standard QL against DA-QL on adversarially corrupted random MDPs.
pub fn experiment_adversarial(cfg: &AdversarialConfig) -> Result<AdversarialReport> {
    let instances: Vec<AdversarialInstance> = (0..cfg.count)
        .into_par_iter()
        .map(|i| adversarial_instance(cfg, i))
        .collect::<Result<_>>()?;
    let n = instances.len().max(1) as f64;
    let standard_fraction = instances.iter().filter(|i| i.standard_tampers).count() as f64 / n;
    let daql_fraction = instances.iter().filter(|i| i.daql_optimal).count() as f64 / n;
    Ok(AdversarialReport {
        config: cfg.clone(),
        instances,
        standard_fraction,
        daql_fraction,
    })
}
