//! Corrupt feedback MDPs: the underlying MDP, per-state additive corruption
//! offsets, the feedback table queried by the agent, and their dynamics.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{argmax, sample_categorical};

/// Absolute tolerance used for probability normalisation checks.
pub const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub initial_dist: Vec<f64>,
    /// `transitions[s][a][s']`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`.
    pub reward: Vec<Vec<f64>>,
    pub discount: f64,
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::input(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::input(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

fn check_table(t: &[Vec<f64>], rows: usize, cols: usize, what: &str) -> Result<()> {
    if t.len() != rows || t.iter().any(|r| r.len() != cols) {
        return Err(Error::input(format!("{what} must be {rows}x{cols}")));
    }
    if t.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::input(format!("{what} has a non-finite entry")));
    }
    Ok(())
}

impl Mdp {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::input("MDP needs at least one state and one action"));
        }
        if self.initial_dist.len() != self.n_states {
            return Err(Error::input("initial_dist length must equal n_states"));
        }
        check_simplex(&self.initial_dist, "initial_dist")?;
        if self.transitions.len() != self.n_states {
            return Err(Error::input("transitions must have one block per state"));
        }
        for (s, block) in self.transitions.iter().enumerate() {
            if block.len() != self.n_actions {
                return Err(Error::input(format!(
                    "transitions[{s}] must have one row per action"
                )));
            }
            for (a, row) in block.iter().enumerate() {
                if row.len() != self.n_states {
                    return Err(Error::input(format!(
                        "transitions[{s}][{a}] has wrong length"
                    )));
                }
                check_simplex(row, &format!("transitions[{s}][{a}]"))?;
            }
        }
        check_table(&self.reward, self.n_states, self.n_actions, "reward")?;
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::input(format!(
                "discount {} outside [0, 1)",
                self.discount
            )));
        }
        Ok(())
    }

    pub fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.n_states {
            return Err(Error::input(format!(
                "state {s} out of range (|S| = {})",
                self.n_states
            )));
        }
        Ok(())
    }

    pub fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.n_actions {
            return Err(Error::input(format!(
                "action {a} out of range (|A| = {})",
                self.n_actions
            )));
        }
        Ok(())
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial_dist, rng)
    }

    /// Draws `s' ~ f(·|s, a)`. Consumes exactly one uniform from `rng`.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_categorical(&self.transitions[s][a], rng)
    }
}

/// Additive query-independent corruption: `c(s', k, d) = d + offsets[s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionMap {
    pub offsets: Vec<f64>,
}

impl CorruptionMap {
    pub fn zeros(n_states: usize) -> Self {
        Self {
            offsets: vec![0.0; n_states],
        }
    }

    pub fn offset(&self, s: usize) -> f64 {
        self.offsets[s]
    }

    pub fn corrupt(&self, next_state: usize, feedback: f64) -> f64 {
        feedback + self.offsets[next_state]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    RewardFeedback,
    ApprovalFeedback,
}

/// The feedback function `δ(s, k)` with queries indexed by actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackTable {
    pub kind: FeedbackKind,
    pub values: Vec<Vec<f64>>,
}

impl FeedbackTable {
    /// Uses the reward table itself as feedback (`δ = r`).
    pub fn from_reward(mdp: &Mdp) -> Self {
        Self {
            kind: FeedbackKind::RewardFeedback,
            values: mdp.reward.clone(),
        }
    }

    pub fn value(&self, s: usize, k: usize) -> f64 {
        self.values[s][k]
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn n_actions(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        check_table(&self.values, n_states, n_actions, "feedback")?;
        if self.kind == FeedbackKind::ApprovalFeedback {
            for (s, row) in self.values.iter().enumerate() {
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                if mean.abs() > PROB_TOL {
                    return Err(Error::input(format!(
                        "approval feedback row {s} has mean {mean}, expected 0"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Result of one environment step with a decoupled query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: usize,
    pub true_feedback: f64,
    pub observed_feedback: f64,
    pub corruption: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cfmdp {
    pub mdp: Mdp,
    pub corruption: CorruptionMap,
    pub feedback: FeedbackTable,
}

impl Cfmdp {
    pub fn new(mdp: Mdp, corruption: CorruptionMap, feedback: FeedbackTable) -> Result<Self> {
        let env = Self {
            mdp,
            corruption,
            feedback,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        self.mdp.validate()?;
        if self.corruption.offsets.len() != self.mdp.n_states {
            return Err(Error::input(
                "corruption offsets must have one entry per state",
            ));
        }
        if self.corruption.offsets.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("corruption offsets must be finite"));
        }
        self.feedback
            .validate(self.mdp.n_states, self.mdp.n_actions)
    }

    pub fn n_states(&self) -> usize {
        self.mdp.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.mdp.n_actions
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.mdp.sample_initial_state(rng)
    }

    /// Takes action `a` in state `s` while querying feedback about `k`.
    ///
    /// The next state depends only on `(s, a)` and one uniform draw from
    /// `rng`; the query only selects which feedback entry is reported.
    pub fn step<R: Rng + ?Sized>(
        &self,
        s: usize,
        a: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        self.check_indices(s, a, k)?;
        Ok(self.step_with(&self.feedback.values, s, a, k, rng))
    }

    /// Like [`Cfmdp::step`] but reports the reward table as feedback (`δ = r`),
    /// which is what a standard reward-driven learner observes.
    pub fn step_reward<R: Rng + ?Sized>(
        &self,
        s: usize,
        a: usize,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        self.check_indices(s, a, a)?;
        Ok(self.step_with(&self.mdp.reward, s, a, a, rng))
    }

    fn check_indices(&self, s: usize, a: usize, k: usize) -> Result<()> {
        self.mdp.check_state(s)?;
        self.mdp.check_action(a)?;
        self.mdp.check_action(k)
    }

    fn step_with<R: Rng + ?Sized>(
        &self,
        table: &[Vec<f64>],
        s: usize,
        a: usize,
        k: usize,
        rng: &mut R,
    ) -> StepOutcome {
        let next_state = self.mdp.sample_next(s, a, rng);
        let true_feedback = table[s][k];
        let corruption = self.corruption.offset(next_state);
        StepOutcome {
            next_state,
            true_feedback,
            observed_feedback: true_feedback + corruption,
            corruption,
        }
    }

    /// The same environment with every corruption offset set to zero.
    pub fn uncorrupted(&self) -> Cfmdp {
        Cfmdp {
            mdp: self.mdp.clone(),
            corruption: CorruptionMap::zeros(self.mdp.n_states),
            feedback: self.feedback.clone(),
        }
    }

    /// Expected corruption `Σ_{s'} f(s'|s,a) c_{s'}` after taking `a` at `s`.
    pub fn expected_corruption(&self, s: usize, a: usize) -> f64 {
        self.mdp.transitions[s][a]
            .iter()
            .zip(&self.corruption.offsets)
            .map(|(p, c)| p * c)
            .sum()
    }

    pub fn to_document(&self) -> CfmdpDocument {
        CfmdpDocument {
            n_states: self.mdp.n_states,
            n_actions: self.mdp.n_actions,
            initial_dist: self.mdp.initial_dist.clone(),
            transitions: self.mdp.transitions.clone(),
            reward: self.mdp.reward.clone(),
            discount: self.mdp.discount,
            corruption_offsets: self.corruption.offsets.clone(),
            feedback: self.feedback.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        crate::doc::to_pretty_json(&self.to_document())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CfmdpDocument = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Flat plain-text form of a [`Cfmdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfmdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub initial_dist: Vec<f64>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub discount: f64,
    pub corruption_offsets: Vec<f64>,
    pub feedback: FeedbackTable,
}

impl TryFrom<CfmdpDocument> for Cfmdp {
    type Error = Error;

    fn try_from(doc: CfmdpDocument) -> Result<Self> {
        Cfmdp::new(
            Mdp {
                n_states: doc.n_states,
                n_actions: doc.n_actions,
                initial_dist: doc.initial_dist,
                transitions: doc.transitions,
                reward: doc.reward,
                discount: doc.discount,
            },
            CorruptionMap {
                offsets: doc.corruption_offsets,
            },
            doc.feedback,
        )
    }
}

/// The two-state example with `S_{t+1} = A_t`, offsets `c_{x^s} = 10 s`,
/// and feedback `δ(·, x⁰) = 1`, `δ(·, x¹) = 0`.
///
/// Interaction starts in `x⁰`. The reward table equals the feedback table.
pub fn make_example_d1() -> Cfmdp {
    let identity =
        |a: usize| -> Vec<f64> { (0..2).map(|s| if s == a { 1.0 } else { 0.0 }).collect() };
    let delta = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
    let mdp = Mdp {
        n_states: 2,
        n_actions: 2,
        initial_dist: vec![1.0, 0.0],
        transitions: vec![
            vec![identity(0), identity(1)],
            vec![identity(0), identity(1)],
        ],
        reward: delta.clone(),
        discount: 0.0,
    };
    Cfmdp {
        mdp,
        corruption: CorruptionMap {
            offsets: vec![0.0, 10.0],
        },
        feedback: FeedbackTable {
            kind: FeedbackKind::RewardFeedback,
            values: delta,
        },
    }
}

/// Details of an adversarial corruption built by [`make_adversarial`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialConstruction {
    pub cfmdp: Cfmdp,
    pub target_state: usize,
    pub optimal_action: usize,
    pub tampering_action: usize,
    /// The state receiving the offset.
    pub corrupted_state: usize,
    /// `f(s'|s,a′) − f(s'|s,a*)` at the corrupted state.
    pub probability_gap: f64,
    /// `[δ(s,a*) − δ(s,a′)] / D`; any offset strictly above this works.
    pub bound: f64,
    pub offset: f64,
}

/// Places a single offset `L` on a state that `a_prime` reaches more often
/// than the feedback-optimal action at `s`, so that a myopic learner on the
/// corrupted signal prefers `a_prime`.
///
/// The corrupted state is the one with the largest probability gap (lowest
/// index on ties) and `L = 2·max(1, bound)`.
pub fn make_adversarial(
    mdp: &Mdp,
    feedback: &FeedbackTable,
    s: usize,
    a_prime: usize,
) -> Result<AdversarialConstruction> {
    mdp.validate()?;
    feedback.validate(mdp.n_states, mdp.n_actions)?;
    mdp.check_state(s)?;
    mdp.check_action(a_prime)?;
    let a_star = argmax(&feedback.values[s]);
    let row_prime = &mdp.transitions[s][a_prime];
    let row_star = &mdp.transitions[s][a_star];
    let mut best: Option<(usize, f64)> = None;
    for (sp, (p1, p0)) in row_prime.iter().zip(row_star).enumerate() {
        let d = p1 - p0;
        if d > 0.0 && best.is_none_or(|(_, bd)| d > bd) {
            best = Some((sp, d));
        }
    }
    let (corrupted_state, gap) = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "action {a_prime} and the optimal action {a_star} at state {s} have identical next-state distributions"
        ))
    })?;
    let bound = (feedback.values[s][a_star] - feedback.values[s][a_prime]) / gap;
    let offset = 2.0 * bound.max(1.0);
    let mut offsets = vec![0.0; mdp.n_states];
    offsets[corrupted_state] = offset;
    let cfmdp = Cfmdp::new(mdp.clone(), CorruptionMap { offsets }, feedback.clone())?;
    Ok(AdversarialConstruction {
        cfmdp,
        target_state: s,
        optimal_action: a_star,
        tampering_action: a_prime,
        corrupted_state,
        probability_gap: gap,
        bound,
        offset,
    })
}
