//! The verification sweep: exact expected-update identities on random small
//! CFMDPs, Monte Carlo checks of the learning-rate schedule, and runtime
//! bounds on long DA-QL runs.
//!
//! Exact sweeps draw their instances from a fixed internal seed, so their
//! verdicts do not depend on the user seed; only the Monte Carlo and
//! training checks use it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentKind, MixturePolicyState, QlAgentState};
use crate::approver::{approval_optimal_policy, greedy_policy};
use crate::error::Result;
use crate::harness::{AgentConfig, EnvConfig, FeedbackSource, InitKind, RunConfig, Trainer};
use crate::mdp::{Cfmdp, CorruptionMap, FeedbackKind, FeedbackTable, Mdp};
use crate::oracle::{
    check_update_incentive, convergence_gap, exact_daql_update, exact_pg_update, min_feedback_gap,
    sample_query_rate, Coupling,
};
use crate::policy::softmax;
use crate::procedural::{sample_dirichlet, ProceduralParams};
use crate::rng::{derive_seed, stream, SimRng};

/// Seed of the exact sweeps.
pub const SWEEP_SEED: u64 = 0x5EED_CF3D;
/// Tolerance of the exact expectation identities.
pub const EXACT_TOLERANCE: f64 = 1e-10;
/// Monte Carlo means must lie within this many standard errors.
pub const RATE_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum CheckName {
    /// Decoupled policy-gradient expected update equals the uncorrupted one.
    PgExpectedUpdate,
    /// Expected DA-QL update decomposes as `h₁(δ − Q) + h₂`.
    DaqlDecomposition,
    /// Mixture-of-experts update never lowers expected true approval.
    MixtureIncentive,
    /// Expected per-query rate equals `α_init / M(s)`.
    QueryRateMean,
    /// Applied rates in `[0, 1]` and Q inside the feedback range.
    RateAndValueBounds,
    GapShiftInvariance,
    /// Small convergence gap implies the approval-optimal greedy policy.
    GreedyConsistency,
}

impl CheckName {
    pub const ALL: [CheckName; 7] = [
        CheckName::PgExpectedUpdate,
        CheckName::DaqlDecomposition,
        CheckName::MixtureIncentive,
        CheckName::QueryRateMean,
        CheckName::RateAndValueBounds,
        CheckName::GapShiftInvariance,
        CheckName::GreedyConsistency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckName::PgExpectedUpdate => "pg-expected-update",
            CheckName::DaqlDecomposition => "daql-decomposition",
            CheckName::MixtureIncentive => "mixture-incentive",
            CheckName::QueryRateMean => "query-rate-mean",
            CheckName::RateAndValueBounds => "rate-and-value-bounds",
            CheckName::GapShiftInvariance => "gap-shift-invariance",
            CheckName::GreedyConsistency => "greedy-consistency",
        }
    }
}

impl std::str::FromStr for CheckName {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckName::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| crate::error::Error::Config(format!("unknown check '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub cfmdps: u64,
    pub policies_per_cfmdp: u64,
    pub mixtures_per_cfmdp: u64,
    pub rate_settings: u64,
    pub rate_draws: u64,
    pub bound_cfmdps: u64,
    pub bound_steps_per_cfmdp: u64,
    pub shift_cases: u64,
    /// Forces `k = a` inside the policy-gradient expectation. The check is
    /// then expected to fail.
    pub inject_coupling: bool,
    /// Empty runs every check.
    pub only: Vec<CheckName>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cfmdps: 100,
            policies_per_cfmdp: 10,
            mixtures_per_cfmdp: 50,
            rate_settings: 20,
            rate_draws: 100_000,
            bound_cfmdps: 10,
            bound_steps_per_cfmdp: 100_000,
            shift_cases: 1000,
            inject_coupling: false,
            only: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: CheckName,
    pub passed: bool,
    /// Largest residual, or the statistic compared against `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub cases: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

/// A random CFMDP with `1..=5` states, `2..=3` actions, feedback in
/// `[−1, 1]` (centred on even `index`) and offsets up to 100 times the
/// feedback scale.
pub fn random_small_cfmdp(rng: &mut SimRng, index: u64) -> Cfmdp {
    let ns = rng.random_range(1..=5);
    let na = rng.random_range(2..=3);
    let transitions = (0..ns)
        .map(|_| (0..na).map(|_| sample_dirichlet(0.5, ns, rng)).collect())
        .collect();
    let reward: Vec<Vec<f64>> = (0..ns)
        .map(|_| (0..na).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let (kind, values) = if index.is_multiple_of(2) {
        let centred = reward
            .iter()
            .map(|row| {
                let m = row.iter().sum::<f64>() / na as f64;
                row.iter().map(|x| x - m).collect()
            })
            .collect();
        (FeedbackKind::ApprovalFeedback, centred)
    } else {
        (FeedbackKind::RewardFeedback, reward.clone())
    };
    let scale = values
        .iter()
        .flatten()
        .map(|x: &f64| x.abs())
        .fold(0.0, f64::max)
        .max(1e-3);
    let offsets = (0..ns)
        .map(|_| rng.random_range(-100.0..100.0) * scale)
        .collect();
    let mdp = Mdp {
        n_states: ns,
        n_actions: na,
        initial_dist: vec![1.0 / ns as f64; ns],
        transitions,
        reward,
        discount: 0.0,
    };
    Cfmdp::new(
        mdp,
        CorruptionMap { offsets },
        FeedbackTable { kind, values },
    )
    .expect("generated tables are valid")
}

fn sweep<F: FnMut(&Cfmdp, &mut SimRng)>(cfg: &VerifyConfig, mut f: F) {
    for i in 0..cfg.cfmdps {
        let mut rng = stream(SWEEP_SEED, i);
        let env = random_small_cfmdp(&mut rng, i);
        f(&env, &mut rng);
    }
}

fn result(
    check: CheckName,
    worst: f64,
    tolerance: f64,
    cases: u64,
    passed: bool,
    detail: String,
) -> CheckResult {
    CheckResult {
        check,
        passed,
        worst,
        tolerance,
        cases,
        detail,
    }
}

pub fn check_pg_expected_update(cfg: &VerifyConfig) -> Result<CheckResult> {
    let coupling = if cfg.inject_coupling {
        Coupling::Coupled
    } else {
        Coupling::Decoupled
    };
    let (mut worst, mut cases) = (0.0f64, 0);
    let mut failure = Ok(());
    sweep(cfg, |env, rng| {
        for _ in 0..cfg.policies_per_cfmdp {
            let policy: Vec<Vec<f64>> = (0..env.n_states())
                .map(|_| {
                    softmax(
                        &(0..env.n_actions())
                            .map(|_| rng.random_range(-3.0..3.0))
                            .collect::<Vec<_>>(),
                    )
                })
                .collect();
            for s in 0..env.n_states() {
                match exact_pg_update(env, &policy, s, coupling) {
                    Ok(r) => worst = worst.max(r.max_abs_difference),
                    Err(e) => failure = Err(e),
                }
                cases += 1;
            }
        }
    });
    failure?;
    let passed = worst < EXACT_TOLERANCE;
    let detail = if cfg.inject_coupling {
        "query forced equal to the action".to_string()
    } else {
        String::new()
    };
    Ok(result(
        CheckName::PgExpectedUpdate,
        worst,
        EXACT_TOLERANCE,
        cases,
        passed,
        detail,
    ))
}

pub fn check_daql_decomposition(cfg: &VerifyConfig) -> Result<CheckResult> {
    let (mut worst, mut cases) = (0.0f64, 0);
    let mut failure = Ok(());
    sweep(cfg, |env, rng| {
        let (ns, na) = (env.n_states(), env.n_actions());
        for _ in 0..cfg.policies_per_cfmdp {
            let alpha = (1.0 - rng.random::<f64>()) / na as f64;
            let mut agent = QlAgentState::new(ns, na, alpha, 0).with_q(
                (0..ns)
                    .map(|_| (0..na).map(|_| rng.random_range(-5.0..5.0)).collect())
                    .collect(),
            );
            agent.visit_counts = (0..ns).map(|_| rng.random_range(1..=50)).collect();
            for s in 0..ns {
                match exact_daql_update(env, &agent, s) {
                    Ok(r) => worst = worst.max(r.decomposition_residual.unwrap_or(f64::INFINITY)),
                    Err(e) => failure = Err(e),
                }
                cases += 1;
            }
        }
    });
    failure?;
    Ok(result(
        CheckName::DaqlDecomposition,
        worst,
        EXACT_TOLERANCE,
        cases,
        worst < EXACT_TOLERANCE,
        String::new(),
    ))
}

pub fn check_mixture_incentive(cfg: &VerifyConfig) -> Result<CheckResult> {
    let (mut worst, mut cases, mut failed) = (0.0f64, 0, 0);
    let mut failure = Ok(());
    sweep(cfg, |env, rng| {
        let (ns, na) = (env.n_states(), env.n_actions());
        for _ in 0..cfg.mixtures_per_cfmdp {
            let mut expert =
                || -> Vec<Vec<f64>> { (0..ns).map(|_| sample_dirichlet(1.0, na, rng)).collect() };
            let (e1, e2) = (expert(), expert());
            let z = rng.random_range(-4.0..4.0);
            let lr = 1.0 - rng.random::<f64>();
            let s = rng.random_range(0..ns);
            let check = MixturePolicyState::new(e1, e2, z, lr)
                .and_then(|m| check_update_incentive(env, &m, s));
            match check {
                Ok(c) => {
                    // most negative approval change seen
                    worst = worst.min(c.gap);
                    if !c.passed {
                        failed += 1;
                    }
                }
                Err(e) => failure = Err(e),
            }
            cases += 1;
        }
    });
    failure?;
    Ok(result(
        CheckName::MixtureIncentive,
        worst,
        -crate::oracle::INCENTIVE_TOLERANCE,
        cases,
        failed == 0,
        format!("{failed} failing triples"),
    ))
}

pub fn check_query_rate_mean(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = stream(cfg.seed, 1);
    let (mut worst, mut failed) = (0.0f64, 0);
    for _ in 0..cfg.rate_settings {
        let na = rng.random_range(2..=4);
        let alpha = (1.0 - rng.random::<f64>()) / na as f64;
        let mut agent = QlAgentState::new(1, na, alpha, 0)
            .with_q(vec![(0..na).map(|_| rng.random_range(-3.0..3.0)).collect()]);
        agent.visit_counts[0] = rng.random_range(1..=100);
        let k = rng.random_range(0..na);
        let (mean, se) = sample_query_rate(&agent, 0, k, cfg.rate_draws, &mut rng)?;
        let expected = alpha / agent.visit_counts[0] as f64;
        let z = if se > 0.0 {
            (mean - expected).abs() / se
        } else if mean == expected {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
        if z > RATE_SIGMAS {
            failed += 1;
        }
    }
    Ok(result(
        CheckName::QueryRateMean,
        worst,
        RATE_SIGMAS,
        cfg.rate_settings,
        failed == 0,
        format!("largest deviation in standard errors; {failed} settings outside"),
    ))
}

pub fn check_rate_and_value_bounds(cfg: &VerifyConfig) -> Result<CheckResult> {
    let (mut worst_rate, mut steps) = (0.0f64, 0);
    for i in 0..cfg.bound_cfmdps {
        let env = EnvConfig::Procedural {
            params: ProceduralParams::default(),
            seed: derive_seed(cfg.seed, i),
            feedback: FeedbackSource::Approval,
            approver: Default::default(),
        };
        let built = env.build()?;
        let fb = &built.cfmdp.feedback;
        let lo = fb
            .values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            + built
                .cfmdp
                .corruption
                .offsets
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
        let hi = fb
            .values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            + built
                .cfmdp
                .corruption
                .offsets
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
        let rc = RunConfig {
            agent: AgentConfig {
                init: InitKind::Uniform { low: lo, high: hi },
                ..AgentConfig::of_kind(AgentKind::DaQl)
            },
            env,
            training_steps: cfg.bound_steps_per_cfmdp,
            snapshot_interval: cfg.bound_steps_per_cfmdp,
            seed: derive_seed(cfg.seed, 1000 + i),
            ..RunConfig::default()
        };
        let mut t = Trainer::new(rc)?;
        while t.step_count() < cfg.bound_steps_per_cfmdp {
            match t.step_once() {
                Ok(step) => worst_rate = worst_rate.max(step.rate.unwrap_or(0.0)),
                Err(e @ crate::error::Error::Invariant { .. }) => {
                    return Ok(result(
                        CheckName::RateAndValueBounds,
                        worst_rate,
                        1.0,
                        steps,
                        false,
                        e.to_string(),
                    ));
                }
                Err(e) => return Err(e),
            }
            steps += 1;
        }
    }
    Ok(result(
        CheckName::RateAndValueBounds,
        worst_rate,
        1.0,
        steps,
        worst_rate <= 1.0,
        "largest applied rate; values checked every step".into(),
    ))
}

/// A value on the grid `j / 1024` with `|j| < 2^20`, where sums and
/// differences of a few terms are exact.
fn dyadic(rng: &mut SimRng) -> f64 {
    rng.random_range(-(1i64 << 20)..(1i64 << 20)) as f64 / 1024.0
}

pub fn check_gap_shift_invariance(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = stream(SWEEP_SEED, u64::MAX);
    let mut worst = 0.0f64;
    for _ in 0..cfg.shift_cases {
        let ns = rng.random_range(1..=5);
        let na = rng.random_range(2..=4);
        let table = |rng: &mut SimRng| -> Vec<Vec<f64>> {
            (0..ns)
                .map(|_| (0..na).map(|_| dyadic(rng)).collect())
                .collect()
        };
        let fb = FeedbackTable {
            kind: FeedbackKind::RewardFeedback,
            values: table(&mut rng),
        };
        let q = table(&mut rng);
        let shifted: Vec<Vec<f64>> = q
            .iter()
            .map(|row| {
                let c = dyadic(&mut rng);
                row.iter().map(|x| x + c).collect()
            })
            .collect();
        worst = worst.max((convergence_gap(&q, &fb) - convergence_gap(&shifted, &fb)).abs());
    }
    Ok(result(
        CheckName::GapShiftInvariance,
        worst,
        0.0,
        cfg.shift_cases,
        worst == 0.0,
        "exact arithmetic grid".into(),
    ))
}

pub fn check_greedy_consistency(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = stream(SWEEP_SEED, u64::MAX - 1);
    let (mut cases, mut failed) = (0, 0);
    while cases < cfg.shift_cases {
        let ns = rng.random_range(1..=5);
        let na = rng.random_range(2..=4);
        let values: Vec<Vec<f64>> = (0..ns)
            .map(|_| (0..na).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let fb = FeedbackTable {
            kind: FeedbackKind::RewardFeedback,
            values,
        };
        let gap = min_feedback_gap(&fb);
        if !gap.is_finite() {
            continue;
        }
        // perturbations of size below gap/4 keep the spread under gap/2
        let q: Vec<Vec<f64>> = fb
            .values
            .iter()
            .map(|row| {
                let c = rng.random_range(-50.0..50.0);
                row.iter()
                    .map(|x| x + c + rng.random_range(-0.24..0.24) * gap)
                    .collect()
            })
            .collect();
        if convergence_gap(&q, &fb) < 0.5 * gap && greedy_policy(&q) != approval_optimal_policy(&fb)
        {
            failed += 1;
        }
        cases += 1;
    }
    Ok(result(
        CheckName::GreedyConsistency,
        failed as f64,
        0.0,
        cases,
        failed == 0,
        "cases where a small gap still picked a different greedy action".into(),
    ))
}

pub fn run_check(check: CheckName, cfg: &VerifyConfig) -> Result<CheckResult> {
    match check {
        CheckName::PgExpectedUpdate => check_pg_expected_update(cfg),
        CheckName::DaqlDecomposition => check_daql_decomposition(cfg),
        CheckName::MixtureIncentive => check_mixture_incentive(cfg),
        CheckName::QueryRateMean => check_query_rate_mean(cfg),
        CheckName::RateAndValueBounds => check_rate_and_value_bounds(cfg),
        CheckName::GapShiftInvariance => check_gap_shift_invariance(cfg),
        CheckName::GreedyConsistency => check_greedy_consistency(cfg),
    }
}

pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let selected: Vec<CheckName> = if cfg.only.is_empty() {
        CheckName::ALL.to_vec()
    } else {
        cfg.only.clone()
    };
    let checks = selected
        .into_iter()
        .map(|c| run_check(c, cfg))
        .collect::<Result<Vec<_>>>()?;
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        config: cfg.clone(),
        checks,
        all_passed,
    })
}
