//! Randomly generated tabular CFMDPs: lognormal rewards, Dirichlet transition
//! rows, and a Dirichlet-distributed corruption profile scaled well above the
//! reward scale.

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Cfmdp, CorruptionMap, FeedbackTable, Mdp};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProceduralParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub reward_lognormal_mu: f64,
    pub reward_lognormal_sigma: f64,
    pub transition_dirichlet_alpha: f64,
    pub corruption_dirichlet_alpha: f64,
    /// Fixed multiplier for the corruption profile. When absent the scale is
    /// `corruption_scale_multiple × max reward`.
    pub corruption_scale: Option<f64>,
    pub corruption_scale_multiple: f64,
    pub discount: f64,
}

impl Default for ProceduralParams {
    fn default() -> Self {
        Self {
            n_states: 10,
            n_actions: 4,
            reward_lognormal_mu: 0.0,
            reward_lognormal_sigma: 1.0,
            transition_dirichlet_alpha: 1.0,
            corruption_dirichlet_alpha: 1.0,
            corruption_scale: None,
            corruption_scale_multiple: 10.0,
            discount: 0.9,
        }
    }
}

impl ProceduralParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::config("procedural sizes must be positive"));
        }
        let positive = [
            ("reward_lognormal_sigma", self.reward_lognormal_sigma),
            (
                "transition_dirichlet_alpha",
                self.transition_dirichlet_alpha,
            ),
            (
                "corruption_dirichlet_alpha",
                self.corruption_dirichlet_alpha,
            ),
            ("corruption_scale_multiple", self.corruption_scale_multiple),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if let Some(scale) = self.corruption_scale {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::config(format!(
                    "corruption_scale must be strictly positive, got {scale}"
                )));
            }
        }
        if !self.reward_lognormal_mu.is_finite() {
            return Err(Error::config("reward_lognormal_mu must be finite"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::config(format!(
                "discount {} outside [0, 1)",
                self.discount
            )));
        }
        Ok(())
    }
}

/// A generated CFMDP (reward feedback) together with its corruption-free twin.
#[derive(Debug, Clone, PartialEq)]
pub struct ProceduralInstance {
    pub cfmdp: Cfmdp,
    pub twin: Cfmdp,
    pub corruption_scale: f64,
}

/// Symmetric Dirichlet draw via normalised Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        for x in &mut draws {
            *x /= total;
        }
    } else {
        // every gamma underflowed; fall back to a vertex of the simplex
        let i = rng.random_range(0..dim);
        draws = vec![0.0; dim];
        draws[i] = 1.0;
    }
    draws
}

/// Deterministic in `(params, seed)`.
pub fn generate_procedural(params: &ProceduralParams, seed: u64) -> Result<ProceduralInstance> {
    params.validate()?;
    let mut rng = rng_from_seed(seed);
    let (ns, na) = (params.n_states, params.n_actions);
    let lognormal = LogNormal::new(params.reward_lognormal_mu, params.reward_lognormal_sigma)
        .map_err(|e| Error::config(format!("lognormal parameters: {e}")))?;
    let reward: Vec<Vec<f64>> = (0..ns)
        .map(|_| (0..na).map(|_| lognormal.sample(&mut rng)).collect())
        .collect();
    let transitions: Vec<Vec<Vec<f64>>> = (0..ns)
        .map(|_| {
            (0..na)
                .map(|_| sample_dirichlet(params.transition_dirichlet_alpha, ns, &mut rng))
                .collect()
        })
        .collect();
    let profile = sample_dirichlet(params.corruption_dirichlet_alpha, ns, &mut rng);
    let max_reward = reward
        .iter()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = params
        .corruption_scale
        .unwrap_or(params.corruption_scale_multiple * max_reward);
    let mdp = Mdp {
        n_states: ns,
        n_actions: na,
        initial_dist: vec![1.0 / ns as f64; ns],
        transitions,
        reward,
        discount: params.discount,
    };
    let feedback = FeedbackTable::from_reward(&mdp);
    let offsets = profile.iter().map(|p| p * scale).collect();
    let cfmdp = Cfmdp::new(mdp, CorruptionMap { offsets }, feedback)?;
    let twin = cfmdp.uncorrupted();
    Ok(ProceduralInstance {
        cfmdp,
        twin,
        corruption_scale: scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let p = ProceduralParams::default();
        let a = generate_procedural(&p, 42).unwrap();
        let b = generate_procedural(&p, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cfmdp.to_json(), b.cfmdp.to_json());
        let c = generate_procedural(&p, 43).unwrap();
        assert_ne!(a.cfmdp.mdp.reward, c.cfmdp.mdp.reward);
    }

    #[test]
    fn default_tables_are_well_formed() {
        let inst = generate_procedural(&ProceduralParams::default(), 1).unwrap();
        let mdp = &inst.cfmdp.mdp;
        assert_eq!((mdp.n_states, mdp.n_actions), (10, 4));
        for block in &mdp.transitions {
            for row in block {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!(mdp.reward.iter().flatten().all(|&r| r > 0.0));
        assert!(inst.twin.corruption.offsets.iter().all(|&c| c == 0.0));
        assert_eq!(inst.twin.mdp, inst.cfmdp.mdp);
    }

    #[test]
    fn corruption_dominates_rewards() {
        for seed in 0..20 {
            let inst = generate_procedural(&ProceduralParams::default(), seed).unwrap();
            let max_r = inst
                .cfmdp
                .mdp
                .reward
                .iter()
                .flatten()
                .cloned()
                .fold(f64::MIN, f64::max);
            let max_c = inst
                .cfmdp
                .corruption
                .offsets
                .iter()
                .cloned()
                .fold(f64::MIN, f64::max);
            assert!((inst.corruption_scale - 10.0 * max_r).abs() < 1e-12);
            // the largest Dirichlet coordinate of 10 is at least 1/10
            assert!(max_c >= max_r - 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_params() {
        let p = ProceduralParams {
            n_states: 0,
            ..Default::default()
        };
        assert!(matches!(generate_procedural(&p, 0), Err(Error::Config(_))));
        let p = ProceduralParams {
            transition_dirichlet_alpha: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
