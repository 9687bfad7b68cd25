//! Three interactive views of the two-state example, exported to
//! JavaScript. Every function returns a JSON string.
//!
//! The same functions are callable from Rust, which is how the tests drive
//! them.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cfmdp::agents::{AgentKind, MixturePolicyState};
use cfmdp::harness::{experiment_d1, D1Config};
use cfmdp::mdp::{make_example_d1, Cfmdp};
use cfmdp::oracle::{check_update_incentive, exact_pg_update, Coupling};
use cfmdp::policy::softmax;

#[derive(Debug, Serialize)]
pub struct CurveSeries {
    pub agent: String,
    /// `(step, value of x⁰, value of x¹)` at the current state; Q-values for
    /// Q-learners, probabilities for policy-gradient agents.
    pub points: Vec<(u64, f64, f64)>,
    pub favored_fraction: f64,
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    /// Probability of `x⁰` at `x⁰`.
    pub p_desired: f64,
    pub clean: f64,
    pub decoupled: f64,
    pub coupled: f64,
}

#[derive(Debug, Serialize)]
pub struct IncentivePoint {
    pub z: f64,
    pub gradient: f64,
    pub approval_before: f64,
    pub approval_after: f64,
}

fn env_with_offset(offset: f64) -> Cfmdp {
    let mut env = make_example_d1();
    env.corruption.offsets = vec![0.0, offset];
    env
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"))
}

fn err_json(e: impl std::fmt::Display) -> String {
    to_json(&serde_json::json!({ "error": e.to_string() }))
}

/// Learning curves of one run per agent on the two-state example.
pub fn learning_curves(
    agents: &[AgentKind],
    steps: u64,
    seed: u64,
    interval: u64,
) -> cfmdp::error::Result<Vec<CurveSeries>> {
    let cfg = D1Config {
        runs: 1,
        steps,
        seed,
        agents: agents.to_vec(),
        curve_interval: interval.max(1),
        ..D1Config::default()
    };
    let (report, curves) = experiment_d1(&cfg)?;
    Ok(report
        .agents
        .iter()
        .map(|a| CurveSeries {
            agent: a.agent.name().to_string(),
            points: curves
                .iter()
                .filter(|c| c.agent == a.agent)
                .map(|c| (c.step, c.value_x0, c.value_x1))
                .collect(),
            favored_fraction: a.favored_per_run[0],
        })
        .collect())
}

/// Exact expected policy-gradient update of the `x⁰` logit at `x⁰`, over a
/// grid of policies, for clean feedback and for corrupted feedback with
/// decoupled and coupled queries.
pub fn update_sweep(offset: f64, points: usize) -> cfmdp::error::Result<Vec<SweepPoint>> {
    let env = env_with_offset(offset);
    let n = points.max(2);
    (1..n)
        .map(|i| {
            let p = i as f64 / n as f64;
            let logit = (p / (1.0 - p)).ln();
            let policy = vec![softmax(&[logit, 0.0]), vec![0.5, 0.5]];
            let d = exact_pg_update(&env, &policy, 0, Coupling::Decoupled)?;
            let c = exact_pg_update(&env, &policy, 0, Coupling::Coupled)?;
            Ok(SweepPoint {
                p_desired: p,
                clean: d.clean_expectation[0],
                decoupled: d.corrupted_expectation[0],
                coupled: c.corrupted_expectation[0],
            })
        })
        .collect()
}

/// Expected mixture-weight gradient and the approval before and after one
/// expected step, for experts "always `x⁰`" and "always `x¹`".
pub fn incentive_curve(
    offset: f64,
    learning_rate: f64,
    z_min: f64,
    z_max: f64,
    points: usize,
) -> cfmdp::error::Result<Vec<IncentivePoint>> {
    let env = env_with_offset(offset);
    let n = points.max(2);
    (0..n)
        .map(|i| {
            let z = z_min + (z_max - z_min) * i as f64 / (n - 1) as f64;
            let m = MixturePolicyState::new(
                vec![vec![1.0, 0.0]; 2],
                vec![vec![0.0, 1.0]; 2],
                z,
                learning_rate,
            )?;
            let c = check_update_incentive(&env, &m, 0)?;
            Ok(IncentivePoint {
                z,
                gradient: c.gradient,
                approval_before: c.approval_before,
                approval_after: c.approval_after,
            })
        })
        .collect()
}

/// `agents` is a comma-separated list such as `"da-ql,approval-ql"`.
#[wasm_bindgen]
pub fn d1_learning_curves(agents: &str, steps: u32, seed: u32, interval: u32) -> String {
    let kinds: Result<Vec<AgentKind>, _> = agents.split(',').map(|s| s.trim().parse()).collect();
    match kinds.and_then(|k| learning_curves(&k, steps.into(), seed.into(), interval.into())) {
        Ok(v) => to_json(&v),
        Err(e) => err_json(e),
    }
}

#[wasm_bindgen]
pub fn expected_update_sweep(offset: f64, points: u32) -> String {
    match update_sweep(offset, points as usize) {
        Ok(v) => to_json(&v),
        Err(e) => err_json(e),
    }
}

#[wasm_bindgen]
pub fn mixture_incentive(
    offset: f64,
    learning_rate: f64,
    z_min: f64,
    z_max: f64,
    points: u32,
) -> String {
    match incentive_curve(offset, learning_rate, z_min, z_max, points as usize) {
        Ok(v) => to_json(&v),
        Err(e) => err_json(e),
    }
}
