use crate::cache::CacheState;
use crate::catalog::ServiceCatalog;
use crate::error::Result;

use super::{CachePolicy, Observation};

/// Every AP splits its cache across all services in proportion to their
/// popularity.
pub fn etahc_place(catalog: &ServiceCatalog, aps: usize, c_ap: f64) -> CacheState {
    let mut cache = CacheState::empty(aps, catalog.len(), c_ap);
    for l in 0..aps {
        cache.row_mut(l).copy_from_slice(&catalog.popularity);
    }
    cache
}

/// Popularity-proportional baseline.
///
/// `eta` scales the share of cache given to popularity-proportional content.
/// Only `eta = 1` is supported; any other value is rejected at construction.
#[derive(Debug, Clone, Default)]
pub struct EtaHc {
    placement: Option<CacheState>,
}

impl EtaHc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_eta(eta: f64) -> Result<Self> {
        if eta != 1.0 {
            return Err(crate::Error::config(format!(
                "etahc only supports eta = 1 (got {eta})"
            )));
        }
        Ok(Self::new())
    }
}

impl CachePolicy for EtaHc {
    fn name(&self) -> &'static str {
        "etahc"
    }

    fn reset(&mut self) {
        self.placement = None;
    }

    fn place(&mut self, obs: &Observation<'_>) -> Result<CacheState> {
        let cache = obs.cache;
        let placement = self.placement.get_or_insert_with(|| {
            etahc_place(obs.catalog, cache.aps(), cache.c_ap)
        });
        Ok(placement.clone())
    }
}
