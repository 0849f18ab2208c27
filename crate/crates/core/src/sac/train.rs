use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::agent::{ActMode, SacAgent, SacConfig};
use super::replay::{ReplayBuffer, Transition};

/// Episodic environment driven by the training loop.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Starts episode `episode` and returns its first state.
    fn reset(&mut self, episode: usize) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<Step>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub mean_reward: f64,
    pub alpha: f64,
    #[serde(rename = "J_Q")]
    pub critic_loss: f64,
    #[serde(rename = "J_pi")]
    pub actor_loss: f64,
}

/// Runs `episodes` episodes of act / store / update. Updates start once the
/// buffer holds one minibatch; `cfg.updates_per_step` gradient rounds follow
/// every environment step.
pub fn train_loop<E: Environment, R: Rng + ?Sized>(
    env: &mut E,
    agent: &mut SacAgent,
    buffer: &mut ReplayBuffer,
    cfg: &SacConfig,
    episodes: usize,
    rng: &mut R,
    mut on_episode: impl FnMut(&EpisodeLog),
) -> Result<Vec<EpisodeLog>> {
    let mut curve = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut state = env.reset(episode)?;
        let (mut reward_sum, mut steps) = (0.0, 0usize);
        let (mut critic_sum, mut actor_sum, mut updates) = (0.0, 0.0, 0usize);
        loop {
            let action = agent.act(&state, ActMode::Stochastic, rng)?;
            let step = env.step(&action)?;
            reward_sum += step.reward;
            steps += 1;
            buffer.push(Transition {
                state: std::mem::take(&mut state),
                action,
                reward: step.reward,
                next_state: step.next_state.clone(),
            });
            for _ in 0..cfg.updates_per_step {
                let Some(batch) = buffer.sample(cfg.batch_size, rng) else {
                    break;
                };
                let stats = agent.update(&batch, cfg, rng)?;
                critic_sum += stats.critic_loss;
                actor_sum += stats.actor_loss;
                updates += 1;
            }
            state = step.next_state;
            if step.done {
                break;
            }
        }
        let mean = |sum: f64, n: usize| if n == 0 { f64::NAN } else { sum / n as f64 };
        let log = EpisodeLog {
            episode,
            mean_reward: mean(reward_sum, steps),
            alpha: agent.alpha(),
            critic_loss: mean(critic_sum, updates),
            actor_loss: mean(actor_sum, updates),
        };
        on_episode(&log);
        curve.push(log);
    }
    Ok(curve)
}
