//! Soft actor-critic cache placement.
//!
//! The agent observes the current window's cache fractions together with the
//! request vector normalised by the UE count, and emits one adjustment in
//! [-1, 1] per (AP, service) pair.

mod agent;
mod replay;
mod train;

pub use agent::{
    actor_loss_for, critic_loss_for, standard_normal, temperature_loss, ActMode, ActorLoss, CriticLoss, SacAgent,
    SacConfig, UpdateStats,
};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use train::{train_loop, EpisodeLog, Environment, Step};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cache::CacheState;
use crate::catalog::RequestVector;
use crate::error::Result;
use crate::policy::{CachePolicy, Observation};

/// `[chi row-major | r / K]`.
pub fn encode_state(cache: &CacheState, requests: &RequestVector, users: usize) -> Vec<f64> {
    let k = users.max(1) as f64;
    cache
        .as_slice()
        .iter()
        .copied()
        .chain(requests.as_slice().iter().map(|r| *r as f64 / k))
        .collect()
}

pub fn state_dim(aps: usize, services: usize) -> usize {
    aps * services + services
}

/// Adds `step_size * action` to the current fractions and projects the
/// result back onto the feasible set.
pub fn action_to_cache(action: &[f64], current: &CacheState, step_size: f64) -> Result<CacheState> {
    if action.len() != current.as_slice().len() {
        return Err(crate::Error::Shape(format!(
            "action has {} entries, cache has {}",
            action.len(),
            current.as_slice().len()
        )));
    }
    let mut next = current.clone();
    for l in 0..current.aps() {
        let m = current.services();
        for (j, v) in next.row_mut(l).iter_mut().enumerate() {
            *v += step_size * action[l * m + j];
        }
    }
    if next.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(crate::Error::PolicyOutput("action produced non-finite fractions".into()));
    }
    next.project();
    Ok(next)
}

/// Trained agent wrapped as a placement policy.
#[derive(Debug, Clone)]
pub struct SacPolicy {
    pub agent: SacAgent,
    pub mode: ActMode,
    pub step_size: f64,
    rng: ChaCha8Rng,
}

impl SacPolicy {
    pub fn new(agent: SacAgent, mode: ActMode, step_size: f64, seed: u64) -> Self {
        SacPolicy {
            agent,
            mode,
            step_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl CachePolicy for SacPolicy {
    fn name(&self) -> &'static str {
        "sac"
    }

    fn place(&mut self, obs: &Observation<'_>) -> Result<CacheState> {
        let state = encode_state(obs.cache, obs.requests, obs.users);
        let action = self.agent.act(&state, self.mode, &mut self.rng)?;
        action_to_cache(&action, obs.cache, self.step_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_action_keeps_cache() {
        let cache = CacheState::from_rows(vec![vec![0.2, 0.3], vec![0.0, 1.0]], 6.0).unwrap();
        let next = action_to_cache(&[0.0; 4], &cache, 0.2).unwrap();
        assert_eq!(next, cache);
    }

    #[test]
    fn full_positive_action_on_empty_cache() {
        let cache = CacheState::empty(2, 5, 6.0);
        let next = action_to_cache(&[1.0; 10], &cache, 0.1).unwrap();
        for l in 0..2 {
            assert!(next.row(l).iter().all(|v| (v - 0.1).abs() < 1e-15));
        }
    }

    #[test]
    fn large_actions_stay_feasible() {
        let cache = CacheState::from_rows(vec![vec![0.9, 0.1, 0.0]], 6.0).unwrap();
        let next = action_to_cache(&[1.0, 1.0, -1.0], &cache, 1.0).unwrap();
        next.check_invariants().unwrap();
        assert_eq!(next.row(0)[2], 0.0);
    }

    #[test]
    fn state_layout() {
        let cache = CacheState::from_rows(vec![vec![0.5, 0.25]], 6.0).unwrap();
        let s = encode_state(&cache, &RequestVector(vec![3, 1]), 4);
        assert_eq!(s, vec![0.5, 0.25, 0.75, 0.25]);
        assert_eq!(s.len(), state_dim(1, 2));
    }
}
