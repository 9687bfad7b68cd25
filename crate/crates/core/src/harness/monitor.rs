//! Runtime checks on Q-learning updates.
//!
//! Two bounds are asserted after every step: the applied learning rate lies
//! in `[0, 1]`, and, for myopic learners, every Q-value stays between the
//! smallest and largest of the initial values and all feedback observed so
//! far (each update is a convex combination of the two).

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentKind, AgentState, AgentStep};
use crate::error::{Error, Result};

pub const RATE_BOUND: &str = "learning-rate bound";
pub const VALUE_BOUND: &str = "value bound";

/// Slack for rounding in `(1 − α) q + α x`, relative to the range magnitude.
const ROUNDING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantMonitor {
    /// `[lo, hi]` of initial values and observed feedback; `None` when
    /// values are not checked.
    pub range: Option<[f64; 2]>,
    pub steps_checked: u64,
}

impl InvariantMonitor {
    pub fn new(agent: &Agent) -> Self {
        let range = match &agent.state {
            AgentState::Ql(q) if agent.kind != AgentKind::StandardQl || q.discount == 0.0 => {
                let lo = q.q.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
                let hi =
                    q.q.iter()
                        .flatten()
                        .cloned()
                        .fold(f64::NEG_INFINITY, f64::max);
                Some([lo, hi])
            }
            _ => None,
        };
        Self {
            range,
            steps_checked: 0,
        }
    }

    /// Checks the state of `agent` right after it produced `step` at state `s`.
    pub fn observe(&mut self, agent: &Agent, s: usize, step: &AgentStep) -> Result<()> {
        let AgentState::Ql(q) = &agent.state else {
            return Ok(());
        };
        self.steps_checked += 1;
        if let Some(rate) = step.rate {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Invariant {
                    invariant: RATE_BOUND,
                    detail: format!(
                        "rate {rate} outside [0, 1] at state {s}, query {} (M(s) = {})",
                        step.query, q.visit_counts[s]
                    ),
                });
            }
        }
        if let Some([lo, hi]) = &mut self.range {
            let x = step.outcome.observed_feedback;
            *lo = lo.min(x);
            *hi = hi.max(x);
            let (lo, hi) = (*lo, *hi);
            let slack = ROUNDING_SLACK * lo.abs().max(hi.abs()).max(1.0);
            let v = q.q[s][step.query];
            if v < lo - slack || v > hi + slack {
                return Err(Error::Invariant {
                    invariant: VALUE_BOUND,
                    detail: format!(
                        "Q({s}, {}) = {v} left the range [{}, {}] of initial values and observed feedback",
                        step.query, lo, hi
                    ),
                });
            }
        }
        Ok(())
    }
}
