//! Actor, twin critics with Polyak-averaged targets, and adaptive entropy
//! temperature.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Checkpoint, GaussianHead, Gradients, Mlp};

use super::replay::Batch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacConfig {
    pub hidden: usize,
    pub lr: f64,
    /// Discount factor.
    pub zeta: f64,
    /// Soft target-update coefficient.
    pub sigma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Scale from an action entry in [-1, 1] to a cache-fraction change.
    pub step_size: f64,
    pub updates_per_step: usize,
    pub init_log_alpha: f64,
    /// Defaults to `-action_dim` when unset.
    pub entropy_target: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: 64,
            lr: 3e-4,
            zeta: 0.99,
            sigma: 0.005,
            batch_size: 256,
            buffer_capacity: 100_000,
            step_size: 0.5,
            updates_per_step: 1,
            init_log_alpha: 0.0,
            entropy_target: None,
        }
    }
}

impl SacConfig {
    /// Full-size network and buffer settings.
    pub fn paper_scale() -> Self {
        SacConfig {
            hidden: 256,
            buffer_capacity: 1_000_000,
            ..SacConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// Loss values and diagnostics of one gradient update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
}

pub struct CriticLoss {
    pub loss: f64,
    pub grads: Gradients,
}

pub struct ActorLoss {
    pub loss: f64,
    pub grads: Gradients,
    /// Log-densities of the reparameterised samples, one per batch row.
    pub log_probs: Vec<f64>,
}

fn layer_lengths(net: &Mlp) -> Vec<usize> {
    net.layers
        .iter()
        .flat_map(|l| [l.weight.len(), l.bias.len()])
        .collect()
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn critic_input(states: &Array2<f64>, actions: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[states.view(), actions.view()]).expect("batch rows agree")
}

/// Squashed samples for a batch of actor outputs.
fn sample_batch(
    actor_out: &Array2<f64>,
    noise: &Array2<f64>,
) -> (Array2<f64>, Vec<crate::nn::SquashedSample>) {
    let d = noise.ncols();
    let samples: Vec<_> = actor_out
        .rows()
        .into_iter()
        .zip(noise.rows())
        .map(|(out, xi)| {
            GaussianHead::from_output(&out.to_vec()).sample(&xi.to_vec())
        })
        .collect();
    let actions = Array2::from_shape_fn((samples.len(), d), |(i, j)| samples[i].action[j]);
    (actions, samples)
}

/// Entropy-temperature objective `mean(-alpha (log_pi + target))` and its
/// derivative with respect to `log_alpha`.
pub fn temperature_loss(log_alpha: f64, log_probs: &[f64], entropy_target: f64) -> (f64, f64) {
    let alpha = log_alpha.exp();
    let n = log_probs.len().max(1) as f64;
    let mean_gap = log_probs.iter().map(|lp| lp + entropy_target).sum::<f64>() / n;
    (-alpha * mean_gap, -alpha * mean_gap)
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub state_dim: usize,
    pub action_dim: usize,
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    pub log_alpha: f64,
    pub entropy_target: f64,
    pub actor_opt: Adam,
    pub critic_opts: [Adam; 2],
    pub alpha_opt: Adam,
    pub updates: usize,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, cfg: &SacConfig, rng: &mut R) -> Self {
        let h = cfg.hidden;
        let actor = Mlp::new(&[state_dim, h, h, 2 * action_dim], rng);
        let critics = [
            Mlp::new(&[state_dim + action_dim, h, h, 1], rng),
            Mlp::new(&[state_dim + action_dim, h, h, 1], rng),
        ];
        let targets = critics.clone();
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        SacAgent {
            state_dim,
            action_dim,
            actor_opt: Adam::new(adam, &layer_lengths(&actor)),
            critic_opts: [
                Adam::new(adam, &layer_lengths(&critics[0])),
                Adam::new(adam, &layer_lengths(&critics[1])),
            ],
            alpha_opt: Adam::new(adam, &[1]),
            actor,
            critics,
            targets,
            log_alpha: cfg.init_log_alpha,
            entropy_target: cfg.entropy_target.unwrap_or(-(action_dim as f64)),
            updates: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn head(&self, state: &[f64]) -> Result<GaussianHead> {
        Ok(GaussianHead::from_output(&self.actor.predict(state)?))
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], mode: ActMode, rng: &mut R) -> Result<Vec<f64>> {
        let head = self.head(state)?;
        Ok(match mode {
            ActMode::Deterministic => head.mode(),
            ActMode::Stochastic => {
                let noise: Vec<f64> = (0..self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
                head.sample(&noise).action
            }
        })
    }

    /// Soft Bellman targets `r + zeta * (min_j Q'_j(s', a') - alpha log pi(a'|s'))`
    /// with `a'` drawn from the current actor using `noise`.
    pub fn critic_targets(&self, batch: &Batch, zeta: f64, alpha: f64, noise: &Array2<f64>) -> Result<Array1<f64>> {
        let out = self.actor.forward(&batch.next_states)?;
        let (next_actions, samples) = sample_batch(out.output(), noise);
        let x = critic_input(&batch.next_states, &next_actions);
        let q1 = self.targets[0].forward(&x)?;
        let q2 = self.targets[1].forward(&x)?;
        Ok(Array1::from_shape_fn(batch.len(), |i| {
            let q = q1.output()[[i, 0]].min(q2.output()[[i, 0]]);
            batch.rewards[i] + zeta * (q - alpha * samples[i].log_prob)
        }))
    }

    /// Mean of `0.5 (Q_i(s, a) - y)^2` and its gradient for one critic.
    pub fn critic_loss(&self, which: usize, batch: &Batch, targets: &Array1<f64>) -> Result<CriticLoss> {
        critic_loss_for(&self.critics[which], batch, targets)
    }

    /// Mean of `alpha log pi(a|s) - min_i Q_i(s, a)` over reparameterised
    /// samples, with its gradient for the actor parameters.
    pub fn actor_loss(&self, states: &Array2<f64>, noise: &Array2<f64>, alpha: f64) -> Result<ActorLoss> {
        actor_loss_for(&self.actor, [&self.critics[0], &self.critics[1]], states, noise, alpha)
    }

    /// One round of critic, actor, temperature and target updates.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, cfg: &SacConfig, rng: &mut R) -> Result<UpdateStats> {
        let step = self.updates;
        let alpha = self.alpha();
        let n = batch.len();

        let next_noise = standard_normal(n, self.action_dim, rng);
        let targets = self.critic_targets(batch, cfg.zeta, alpha, &next_noise)?;
        let mut critic_total = 0.0;
        for i in 0..2 {
            let CriticLoss { loss, grads } = self.critic_loss(i, batch, &targets)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { step, what: "critic loss" });
            }
            critic_total += loss;
            self.critic_opts[i].update(self.critics[i].slices_mut(), grads.slices());
        }

        let noise = standard_normal(n, self.action_dim, rng);
        let actor = self.actor_loss(&batch.states, &noise, alpha)?;
        if !actor.loss.is_finite() || !actor.grads.is_finite() {
            return Err(Error::Divergence { step, what: "actor loss" });
        }
        self.actor_opt.update(self.actor.slices_mut(), actor.grads.slices());

        let (alpha_loss, grad) = temperature_loss(self.log_alpha, &actor.log_probs, self.entropy_target);
        if !alpha_loss.is_finite() {
            return Err(Error::Divergence { step, what: "temperature loss" });
        }
        let mut la = [self.log_alpha];
        self.alpha_opt.update(vec![&mut la[..]], vec![&[grad][..]]);
        self.log_alpha = la[0];

        for i in 0..2 {
            self.targets[i].polyak_from(&self.critics[i], cfg.sigma);
        }
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss: critic_total / 2.0,
            actor_loss: actor.loss,
            alpha_loss,
            alpha: self.alpha(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.put_scalar("state_dim", self.state_dim as f64);
        c.put_scalar("action_dim", self.action_dim as f64);
        c.put_scalar("log_alpha", self.log_alpha);
        c.put_scalar("entropy_target", self.entropy_target);
        c.put_scalar("updates", self.updates as f64);
        c.put_mlp("actor", &self.actor);
        c.put_adam("actor_opt", &self.actor_opt);
        c.put_adam("alpha_opt", &self.alpha_opt);
        for i in 0..2 {
            c.put_mlp(&format!("critic{i}"), &self.critics[i]);
            c.put_mlp(&format!("target{i}"), &self.targets[i]);
            c.put_adam(&format!("critic{i}_opt"), &self.critic_opts[i]);
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let state_dim = c.scalar("state_dim")? as usize;
        let action_dim = c.scalar("action_dim")? as usize;
        let actor = c.get_mlp("actor")?;
        let critics = [c.get_mlp("critic0")?, c.get_mlp("critic1")?];
        let targets = [c.get_mlp("target0")?, c.get_mlp("target1")?];
        if actor.input_dim() != state_dim || actor.output_dim() != 2 * action_dim {
            return Err(Error::Checkpoint("actor shape does not match stored dimensions".into()));
        }
        for net in critics.iter().chain(&targets) {
            if net.input_dim() != state_dim + action_dim || net.output_dim() != 1 {
                return Err(Error::Checkpoint("critic shape does not match stored dimensions".into()));
            }
        }
        Ok(SacAgent {
            state_dim,
            action_dim,
            actor_opt: c.get_adam("actor_opt", &layer_lengths(&actor))?,
            critic_opts: [
                c.get_adam("critic0_opt", &layer_lengths(&critics[0]))?,
                c.get_adam("critic1_opt", &layer_lengths(&critics[1]))?,
            ],
            alpha_opt: c.get_adam("alpha_opt", &[1])?,
            actor,
            critics,
            targets,
            log_alpha: c.scalar("log_alpha")?,
            entropy_target: c.scalar("entropy_target")?,
            updates: c.scalar("updates")? as usize,
        })
    }
}

pub fn critic_loss_for(critic: &Mlp, batch: &Batch, targets: &Array1<f64>) -> Result<CriticLoss> {
    let n = batch.len() as f64;
    let fwd = critic.forward(&critic_input(&batch.states, &batch.actions))?;
    let diff = &fwd.output().column(0) - targets;
    let loss = diff.iter().map(|d| 0.5 * d * d).sum::<f64>() / n;
    let upstream = (diff / n).insert_axis(Axis(1));
    let (grads, _) = critic.backward(&fwd, &upstream);
    Ok(CriticLoss { loss, grads })
}

pub fn actor_loss_for(
    actor: &Mlp,
    critics: [&Mlp; 2],
    states: &Array2<f64>,
    noise: &Array2<f64>,
    alpha: f64,
) -> Result<ActorLoss> {
    let n = states.nrows();
    let nf = n as f64;
    let sdim = states.ncols();
    let fwd = actor.forward(states)?;
    let (actions, samples) = sample_batch(fwd.output(), noise);
    let x = critic_input(states, &actions);
    let f1 = critics[0].forward(&x)?;
    let f2 = critics[1].forward(&x)?;
    let (q1, q2) = (f1.output().column(0), f2.output().column(0));

    let mut loss = 0.0;
    let mut up1 = Array2::zeros((n, 1));
    let mut up2 = Array2::zeros((n, 1));
    for i in 0..n {
        let first = q1[i] <= q2[i];
        let q = if first { q1[i] } else { q2[i] };
        loss += alpha * samples[i].log_prob - q;
        if first {
            up1[[i, 0]] = -1.0 / nf;
        } else {
            up2[[i, 0]] = -1.0 / nf;
        }
    }
    loss /= nf;

    let (_, dx1) = critics[0].backward(&f1, &up1);
    let (_, dx2) = critics[1].backward(&f2, &up2);
    let d_actions = &dx1.slice(s![.., sdim..]) + &dx2.slice(s![.., sdim..]);

    let out_dim = actor.output_dim();
    let mut upstream = Array2::zeros((n, out_dim));
    for i in 0..n {
        let da = d_actions.row(i);
        let g = samples[i].backward(&da.to_vec(), alpha / nf);
        for (j, v) in g.concat().into_iter().enumerate() {
            upstream[[i, j]] = v;
        }
    }
    let (grads, _) = actor.backward(&fwd, &upstream);
    Ok(ActorLoss {
        loss,
        grads,
        log_probs: samples.iter().map(|s| s.log_prob).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, relative_error, STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64) -> (SacAgent, Batch, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SacConfig {
            hidden: 6,
            ..SacConfig::default()
        };
        let agent = SacAgent::new(3, 2, &cfg, &mut rng);
        let batch = Batch {
            states: Array2::from_shape_fn((4, 3), |_| rng.random_range(0.0..1.0)),
            actions: Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0)),
            rewards: Array1::from_shape_fn(4, |_| rng.random_range(0.0..1.0)),
            next_states: Array2::from_shape_fn((4, 3), |_| rng.random_range(0.0..1.0)),
        };
        (agent, batch, rng)
    }

    #[test]
    fn zero_discount_zero_temperature_targets_are_rewards() {
        let (mut agent, mut batch, mut rng) = tiny(1);
        batch.rewards.fill(0.0);
        for c in agent.critics.iter_mut() {
            c.zero_output_layer();
        }
        let noise = standard_normal(4, 2, &mut rng);
        let y = agent.critic_targets(&batch, 0.0, 0.0, &noise).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
        let l = agent.critic_loss(0, &batch, &y).unwrap();
        assert_eq!(l.loss, 0.0);
    }

    #[test]
    fn identical_critics_have_equal_losses() {
        let (mut agent, batch, mut rng) = tiny(2);
        agent.critics[1] = agent.critics[0].clone();
        let noise = standard_normal(4, 2, &mut rng);
        let y = agent.critic_targets(&batch, 0.99, 0.2, &noise).unwrap();
        let a = agent.critic_loss(0, &batch, &y).unwrap();
        let b = agent.critic_loss(1, &batch, &y).unwrap();
        assert_eq!(a.loss, b.loss);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let (agent, batch, mut rng) = tiny(3);
        let noise = standard_normal(4, 2, &mut rng);
        let y = agent.critic_targets(&batch, 0.9, 0.3, &noise).unwrap();
        let analytic = agent.critic_loss(0, &batch, &y).unwrap().grads.flatten();
        let mut probe = agent.critics[0].clone();
        let numeric = central_difference(&agent.critics[0].flatten(), STEP, |p| {
            probe.set_flat(p);
            critic_loss_for(&probe, &batch, &y).unwrap().loss
        });
        assert!(relative_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let (agent, batch, mut rng) = tiny(4);
        let noise = standard_normal(4, 2, &mut rng);
        let critics = [&agent.critics[0], &agent.critics[1]];
        let analytic = actor_loss_for(&agent.actor, critics, &batch.states, &noise, 0.4)
            .unwrap()
            .grads
            .flatten();
        let mut probe = agent.actor.clone();
        let numeric = central_difference(&agent.actor.flatten(), STEP, |p| {
            probe.set_flat(p);
            actor_loss_for(&probe, critics, &batch.states, &noise, 0.4).unwrap().loss
        });
        assert!(relative_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn constant_critics_shift_actor_loss() {
        let (mut agent, batch, mut rng) = tiny(5);
        for c in agent.critics.iter_mut() {
            c.zero_output_layer();
        }
        let noise = standard_normal(4, 2, &mut rng);
        let base = agent.actor_loss(&batch.states, &noise, 0.0).unwrap();
        assert!(base.grads.flatten().iter().all(|g| *g == 0.0));

        let (agent, batch, mut rng) = tiny(6);
        let noise = standard_normal(4, 2, &mut rng);
        let before = agent.actor_loss(&batch.states, &noise, 0.3).unwrap();
        let mut shifted = agent.clone();
        for c in shifted.critics.iter_mut() {
            c.layers.last_mut().unwrap().bias[0] += 2.5;
        }
        let after = shifted.actor_loss(&batch.states, &noise, 0.3).unwrap();
        assert!((after.loss - (before.loss - 2.5)).abs() < 1e-12);
        assert_eq!(after.grads, before.grads);
    }

    #[test]
    fn temperature_equilibrium_and_direction() {
        let (_, g) = temperature_loss(0.3, &[-5.0, -3.0], 4.0);
        assert_eq!(g, 0.0);
        // Entropy too low (log pi above -target): descent raises alpha.
        let (_, g) = temperature_loss(0.0, &[1.0, 2.0], 4.0);
        assert!(g < 0.0);
        let numeric = central_difference(&[0.2], STEP, |la| temperature_loss(la[0], &[1.0, -3.5], 2.0).0);
        let (_, analytic) = temperature_loss(0.2, &[1.0, -3.5], 2.0);
        assert!(relative_error(&[analytic], &numeric) < 1e-8);
    }

    #[test]
    fn default_entropy_target_is_negative_action_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SacConfig {
            hidden: 4,
            ..SacConfig::default()
        };
        let agent = SacAgent::new(15 * 20 + 20, 15 * 20, &cfg, &mut rng);
        assert_eq!(agent.entropy_target, -300.0);
    }

    #[test]
    fn deterministic_action_ignores_rng() {
        let (mut agent, batch, _) = tiny(7);
        let s: Vec<f64> = batch.states.row(0).to_vec();
        let a = agent.act(&s, ActMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = agent.act(&s, ActMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        agent.actor.zero_output_layer();
        let z = agent.act(&s, ActMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn stochastic_actions_are_seed_reproducible() {
        let (agent, batch, _) = tiny(8);
        let s: Vec<f64> = batch.states.row(1).to_vec();
        let a = agent.act(&s, ActMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = agent.act(&s, ActMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn update_moves_critics_and_polyaks_targets() {
        let (mut agent, batch, mut rng) = tiny(9);
        let cfg = SacConfig {
            hidden: 6,
            ..SacConfig::default()
        };
        let before = agent.clone();
        let stats = agent.update(&batch, &cfg, &mut rng).unwrap();
        assert!(stats.critic_loss.is_finite());
        assert_ne!(agent.critics[0], before.critics[0]);
        let t0 = agent.targets[0].flatten();
        let want: Vec<f64> = before.targets[0]
            .flatten()
            .iter()
            .zip(agent.critics[0].flatten())
            .map(|(t, c)| cfg.sigma * c + (1.0 - cfg.sigma) * t)
            .collect();
        assert!(relative_error(&t0, &want) < 1e-14);
        assert_eq!(agent.updates, 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (mut agent, batch, mut rng) = tiny(10);
        agent.update(&batch, &SacConfig { hidden: 6, ..SacConfig::default() }, &mut rng).unwrap();
        let text = agent.to_checkpoint().to_text();
        let back = SacAgent::from_checkpoint(&Checkpoint::parse(&text).unwrap()).unwrap();
        assert_eq!(back.actor, agent.actor);
        assert_eq!(back.targets[1], agent.targets[1]);
        assert_eq!(back.critic_opts[0], agent.critic_opts[0]);
        assert_eq!(back.log_alpha, agent.log_alpha);
    }
}
