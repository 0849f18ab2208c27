//! Run configuration.
//!
//! Stored as a flat TOML key/value file; every key is optional and falls
//! back to the defaults below. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::ServiceCatalog;
use crate::delay::DelayParams;
use crate::error::{Error, Result};
use crate::sac::SacConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Etahc,
    Hco,
    Sac,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Etahc => "etahc",
            PolicyKind::Hco => "hco",
            PolicyKind::Sac => "sac",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "etahc" => Ok(PolicyKind::Etahc),
            "hco" => Ok(PolicyKind::Hco),
            "sac" => Ok(PolicyKind::Sac),
            other => Err(Error::config(format!("unknown policy {other:?} (expected etahc, hco or sac)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// UEs on the train.
    pub users: usize,
    /// Serving APs in the window.
    pub aps: usize,
    pub services: usize,
    /// Per-AP cache capacity, Mbits.
    pub cache_mbits: f64,
    pub zipf_skew: f64,
    pub size_min_mbits: f64,
    pub size_max_mbits: f64,
    pub chunk_mbits: f64,
    /// Period length, seconds.
    pub tau: f64,
    /// Spectral efficiency, bit/s/Hz.
    pub spectral_efficiency: f64,
    pub bandwidth_mhz: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub max_patience: u32,
    /// Trackside APs passed over one journey.
    pub journey_length: usize,
    /// APs the window moves per period.
    pub window_advance: usize,
    pub policy: PolicyKind,
    pub eta: f64,
    pub history_window: usize,
    pub seed: u64,
    pub catalog_seed: u64,
    /// Evaluation episodes per run.
    pub episodes: usize,
    pub train_episodes: usize,
    /// Record wall-clock decision times in the metrics output. Off by
    /// default so that metrics files are reproducible byte for byte.
    pub record_timing: bool,
    pub sac_hidden: usize,
    pub sac_lr: f64,
    pub sac_zeta: f64,
    pub sac_sigma: f64,
    pub sac_batch: usize,
    pub sac_buffer: usize,
    pub sac_step_size: f64,
    pub sac_updates_per_step: usize,
    pub sac_init_log_alpha: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let sac = SacConfig::default();
        SimConfig {
            users: 300,
            aps: 15,
            services: 20,
            cache_mbits: 6.0,
            zipf_skew: 1.1,
            size_min_mbits: 10.0,
            size_max_mbits: 20.0,
            chunk_mbits: 0.02,
            tau: 5.0,
            spectral_efficiency: 2.0,
            bandwidth_mhz: 1.0,
            delta: 0.005,
            delta_prime: 0.05,
            max_patience: 5,
            journey_length: 200,
            window_advance: 1,
            policy: PolicyKind::Etahc,
            eta: 1.0,
            history_window: 50,
            seed: 1,
            catalog_seed: 7,
            episodes: 1,
            train_episodes: 50,
            record_timing: false,
            sac_hidden: sac.hidden,
            sac_lr: sac.lr,
            sac_zeta: sac.zeta,
            sac_sigma: sac.sigma,
            sac_batch: sac.batch_size,
            sac_buffer: sac.buffer_capacity,
            sac_step_size: sac.step_size,
            sac_updates_per_step: sac.updates_per_step,
            sac_init_log_alpha: sac.init_log_alpha,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be a positive number (got {v})")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be at least 1")))
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        at_least_one("users", self.users)?;
        at_least_one("aps", self.aps)?;
        at_least_one("services", self.services)?;
        at_least_one("max_patience", self.max_patience as usize)?;
        at_least_one("journey_length", self.journey_length)?;
        at_least_one("history_window", self.history_window)?;
        positive("cache_mbits", self.cache_mbits)?;
        positive("size_min_mbits", self.size_min_mbits)?;
        positive("size_max_mbits", self.size_max_mbits)?;
        positive("chunk_mbits", self.chunk_mbits)?;
        positive("spectral_efficiency", self.spectral_efficiency)?;
        positive("bandwidth_mhz", self.bandwidth_mhz)?;
        if self.size_min_mbits > self.size_max_mbits {
            return Err(Error::config("size_min_mbits must not exceed size_max_mbits"));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::config(format!("tau must be >= 0 (got {})", self.tau)));
        }
        if !(self.zipf_skew >= 0.0 && self.zipf_skew.is_finite()) {
            return Err(Error::config(format!("zipf_skew must be >= 0 (got {})", self.zipf_skew)));
        }
        if !(self.delta >= 0.0 && self.delta_prime >= 0.0) {
            return Err(Error::config("delta and delta_prime must be >= 0"));
        }
        if self.window_advance > self.aps {
            return Err(Error::config(format!(
                "window_advance ({}) must not exceed aps ({})",
                self.window_advance, self.aps
            )));
        }
        if self.eta != 1.0 {
            return Err(Error::config("eta: only 1 is supported"));
        }
        at_least_one("sac_hidden", self.sac_hidden)?;
        at_least_one("sac_batch", self.sac_batch)?;
        at_least_one("sac_buffer", self.sac_buffer)?;
        if !(self.sac_sigma > 0.0 && self.sac_sigma <= 1.0) {
            return Err(Error::config("sac_sigma must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.sac_zeta) {
            return Err(Error::config("sac_zeta must lie in [0, 1]"));
        }
        positive("sac_lr", self.sac_lr)?;
        positive("sac_step_size", self.sac_step_size)?;
        Ok(())
    }

    /// Periods per episode.
    pub fn periods(&self) -> usize {
        self.journey_length / self.window_advance.max(1)
    }

    pub fn set_periods(&mut self, periods: usize) {
        self.journey_length = periods * self.window_advance.max(1);
    }

    /// Effective download rate in Mbit/s.
    pub fn rate_mbps(&self) -> f64 {
        self.spectral_efficiency * self.bandwidth_mhz
    }

    pub fn delay_params(&self) -> DelayParams {
        DelayParams {
            delta: self.delta,
            delta_prime: self.delta_prime,
            rate: self.rate_mbps(),
            tau: self.tau,
        }
    }

    pub fn catalog(&self) -> Result<ServiceCatalog> {
        ServiceCatalog::build(
            self.services,
            (self.size_min_mbits, self.size_max_mbits),
            self.zipf_skew,
            self.chunk_mbits,
            self.catalog_seed,
        )
    }

    pub fn sac(&self) -> SacConfig {
        SacConfig {
            hidden: self.sac_hidden,
            lr: self.sac_lr,
            zeta: self.sac_zeta,
            sigma: self.sac_sigma,
            batch_size: self.sac_batch,
            buffer_capacity: self.sac_buffer,
            step_size: self.sac_step_size,
            updates_per_step: self.sac_updates_per_step,
            init_log_alpha: self.sac_init_log_alpha,
            entropy_target: None,
        }
    }
}
