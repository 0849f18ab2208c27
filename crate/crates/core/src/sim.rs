//! Journey simulation: the serving window slides along the track while the
//! UEs on the train issue requests and a policy places content each period.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cache::{hit_probability_qoe, hit_probability_request, CacheState, Topology};
use crate::catalog::{generate_requests, init_users, RequestVector, ServiceCatalog, UserState};
use crate::config::{PolicyKind, SimConfig};
use crate::delay::{serve_period, update_priorities, DelayParams, DemandState, PeriodOutcome};
use crate::error::Result;
use crate::metrics::MetricsRow;
use crate::policy::{CachePolicy, EtaHc, Hco, Observation};
use crate::sac::{
    action_to_cache, encode_state, state_dim, train_loop, ActMode, EpisodeLog, Environment, ReplayBuffer, SacAgent,
    SacPolicy, Step,
};

/// Training episodes draw from a stream family disjoint from evaluation.
pub const TRAIN_SEED_OFFSET: u64 = 0x7_2A1E_0000;

#[derive(Debug, Clone)]
pub struct World {
    pub cfg: SimConfig,
    pub catalog: ServiceCatalog,
    pub topology: Topology,
    pub params: DelayParams,
    pub users: Vec<UserState>,
    /// Fractions installed in the current window.
    pub cache: CacheState,
    /// Backlog weight carried into the current period.
    pub omega: Vec<u64>,
    pub requests: RequestVector,
    pub period: usize,
    /// Placement served with in the last period, before the window moved.
    pub installed: CacheState,
    rng: ChaCha8Rng,
}

impl World {
    pub fn new(cfg: &SimConfig, catalog: &ServiceCatalog, seed: u64, episode: u64) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.delay_params();
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(episode);
        let users = init_users(cfg.users, catalog, cfg.max_patience, &mut rng);
        let requests = RequestVector::count(&users, catalog.len());
        Ok(World {
            cfg: cfg.clone(),
            catalog: catalog.clone(),
            topology: Topology::linear(cfg.aps),
            params,
            users,
            cache: CacheState::empty(cfg.aps, catalog.len(), cfg.cache_mbits),
            installed: CacheState::empty(cfg.aps, catalog.len(), cfg.cache_mbits),
            omega: vec![0; catalog.len()],
            requests,
            period: 0,
            rng,
        })
    }

    pub fn done(&self) -> bool {
        self.period >= self.cfg.periods()
    }

    pub fn observation(&self) -> Observation<'_> {
        Observation {
            cache: &self.cache,
            requests: &self.requests,
            catalog: &self.catalog,
            users: self.users.len(),
        }
    }

    /// Installs `placement`, serves the period, then moves the window and
    /// draws the next period's requests.
    pub fn step(&mut self, placement: &CacheState, decision_ms: f64) -> Result<(MetricsRow, PeriodOutcome)> {
        self.cache.apply_fraction_update(placement)?;
        let demand = DemandState::new(self.requests.clone(), self.omega.clone());
        let outcome = serve_period(&demand, &self.cache, &self.topology, &self.catalog, &self.params)?;
        let row = MetricsRow {
            period: self.period,
            qoe: outcome.qoe,
            hit_req: hit_probability_request(&self.cache, &self.requests, &self.catalog, self.users.len()),
            hit_qoe: hit_probability_qoe(&self.cache, &self.requests, &self.omega, &self.catalog).unwrap_or(0.0),
            served: outcome.served.len(),
            stalled: outcome.stalled.len(),
            decision_ms,
        };
        let mask = outcome.served_mask(self.catalog.len());
        let (omega, _) = update_priorities(&self.omega, &self.requests, &mask);
        self.omega = omega;
        self.installed.clone_from(&self.cache);
        self.cache.slide(self.cfg.window_advance);
        self.requests = generate_requests(
            &mut self.users,
            &self.catalog,
            &mask,
            self.cfg.max_patience,
            &mut self.rng,
        );
        self.period += 1;
        Ok((row, outcome))
    }
}

/// Asks the policy for a placement and plays one period with it.
pub fn run_period(world: &mut World, policy: &mut dyn CachePolicy) -> Result<MetricsRow> {
    let start = Instant::now();
    let placement = policy.place(&world.observation())?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let decision_ms = if world.cfg.record_timing { elapsed } else { 0.0 };
    Ok(world.step(&placement, decision_ms)?.0)
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeResult {
    pub rows: Vec<MetricsRow>,
    /// Installed placement of every period, when requested.
    pub caches: Vec<CacheState>,
}

impl EpisodeResult {
    pub fn mean_qoe(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.qoe))
    }

    pub fn mean_hit_qoe(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.hit_qoe))
    }

    pub fn mean_hit_req(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.hit_req))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn run_episode(
    cfg: &SimConfig,
    catalog: &ServiceCatalog,
    policy: &mut dyn CachePolicy,
    seed: u64,
    episode: u64,
    keep_caches: bool,
) -> Result<EpisodeResult> {
    policy.reset();
    let mut world = World::new(cfg, catalog, seed, episode)?;
    let mut result = EpisodeResult::default();
    while !world.done() {
        result.rows.push(run_period(&mut world, policy)?);
        if keep_caches {
            result.caches.push(world.installed.clone());
        }
    }
    Ok(result)
}

/// Episodic wrapper used to train the SAC agent. Reward is the period QoE.
#[derive(Debug, Clone)]
pub struct CacheEnv {
    cfg: SimConfig,
    catalog: ServiceCatalog,
    seed: u64,
    world: Option<World>,
}

impl CacheEnv {
    pub fn new(cfg: &SimConfig, catalog: &ServiceCatalog, seed: u64) -> Self {
        CacheEnv {
            cfg: cfg.clone(),
            catalog: catalog.clone(),
            seed,
            world: None,
        }
    }

    fn encode(world: &World) -> Vec<f64> {
        encode_state(&world.cache, &world.requests, world.users.len())
    }
}

impl Environment for CacheEnv {
    fn state_dim(&self) -> usize {
        state_dim(self.cfg.aps, self.catalog.len())
    }

    fn action_dim(&self) -> usize {
        self.cfg.aps * self.catalog.len()
    }

    fn reset(&mut self, episode: usize) -> Result<Vec<f64>> {
        let world = World::new(&self.cfg, &self.catalog, self.seed, episode as u64)?;
        let state = Self::encode(&world);
        self.world = Some(world);
        Ok(state)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let world = self
            .world
            .as_mut()
            .ok_or_else(|| crate::Error::config("environment stepped before reset"))?;
        let placement = action_to_cache(action, &world.cache, self.cfg.sac_step_size)?;
        let (row, _) = world.step(&placement, 0.0)?;
        Ok(Step {
            reward: row.qoe,
            next_state: Self::encode(world),
            done: world.done(),
        })
    }
}

/// Trains a fresh agent for `cfg.train_episodes` episodes.
pub fn train_agent(
    cfg: &SimConfig,
    catalog: &ServiceCatalog,
    seed: u64,
    on_episode: impl FnMut(&EpisodeLog),
) -> Result<(SacAgent, Vec<EpisodeLog>)> {
    let sac = cfg.sac();
    let train_seed = seed.wrapping_add(TRAIN_SEED_OFFSET);
    let mut env = CacheEnv::new(cfg, catalog, train_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(train_seed);
    let mut agent = SacAgent::new(env.state_dim(), env.action_dim(), &sac, &mut rng);
    let mut buffer = ReplayBuffer::new(sac.buffer_capacity);
    let curve = train_loop(&mut env, &mut agent, &mut buffer, &sac, cfg.train_episodes, &mut rng, on_episode)?;
    Ok((agent, curve))
}

/// Builds a policy of the given kind. SAC needs a trained agent.
pub fn build_policy(cfg: &SimConfig, kind: PolicyKind, agent: Option<SacAgent>) -> Result<Box<dyn CachePolicy>> {
    Ok(match kind {
        PolicyKind::Etahc => Box::new(EtaHc::with_eta(cfg.eta)?),
        PolicyKind::Hco => Box::new(Hco::new(cfg.history_window, cfg.services)),
        PolicyKind::Sac => {
            let agent = agent.ok_or_else(|| crate::Error::config("sac policy needs a trained agent"))?;
            let want = (state_dim(cfg.aps, cfg.services), cfg.aps * cfg.services);
            if (agent.state_dim, agent.action_dim) != want {
                return Err(crate::Error::Shape(format!(
                    "agent was trained for state/action dims ({}, {}), this run needs {want:?}",
                    agent.state_dim, agent.action_dim
                )));
            }
            Box::new(SacPolicy::new(agent, ActMode::Deterministic, cfg.sac_step_size, cfg.seed))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            users: 40,
            aps: 4,
            services: 6,
            journey_length: 12,
            ..SimConfig::default()
        }
    }

    #[test]
    fn same_seed_same_rows() {
        let cfg = small();
        let cat = cfg.catalog().unwrap();
        let mut a = build_policy(&cfg, PolicyKind::Hco, None).unwrap();
        let mut b = build_policy(&cfg, PolicyKind::Hco, None).unwrap();
        let ra = run_episode(&cfg, &cat, a.as_mut(), 3, 0, false).unwrap();
        let rb = run_episode(&cfg, &cat, b.as_mut(), 3, 0, false).unwrap();
        assert_eq!(ra.rows, rb.rows);
        assert_eq!(ra.rows.len(), 12);
    }

    #[test]
    fn rows_are_bounded() {
        let cfg = small();
        let cat = cfg.catalog().unwrap();
        for kind in [PolicyKind::Etahc, PolicyKind::Hco] {
            let mut p = build_policy(&cfg, kind, None).unwrap();
            let res = run_episode(&cfg, &cat, p.as_mut(), 5, 1, true).unwrap();
            assert_eq!(res.caches.len(), res.rows.len());
            for (row, cache) in res.rows.iter().zip(&res.caches) {
                assert!((0.0..=1.0).contains(&row.qoe));
                assert!((0.0..=1.0 + 1e-12).contains(&row.hit_req));
                assert!((0.0..=1.0 + 1e-12).contains(&row.hit_qoe));
                cache.check_invariants().unwrap();
            }
        }
    }

    #[test]
    fn sac_requires_matching_agent() {
        let cfg = small();
        assert!(build_policy(&cfg, PolicyKind::Sac, None).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = SacAgent::new(3, 2, &cfg.sac(), &mut rng);
        let err = build_policy(&cfg, PolicyKind::Sac, Some(agent)).err().unwrap();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn env_episode_length_matches_periods() {
        let cfg = small();
        let cat = cfg.catalog().unwrap();
        let mut env = CacheEnv::new(&cfg, &cat, 9);
        let s = env.reset(0).unwrap();
        assert_eq!(s.len(), env.state_dim());
        let zero = vec![0.0; env.action_dim()];
        let mut steps = 0;
        loop {
            steps += 1;
            if env.step(&zero).unwrap().done {
                break;
            }
        }
        assert_eq!(steps, cfg.periods());
    }
}
