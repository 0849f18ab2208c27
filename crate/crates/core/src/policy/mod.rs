//! Cache-placement policies.

mod etahc;
mod hco;

pub use etahc::{etahc_place, EtaHc};
pub use hco::{hco_place, solve_total_allocation, Allocation, Hco, RequestHistory};

use crate::cache::CacheState;
use crate::catalog::{RequestVector, ServiceCatalog};
use crate::error::Result;

/// What a policy sees when it decides the placement of one period.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// Cache of the current serving window before this period's placement.
    pub cache: &'a CacheState,
    pub requests: &'a RequestVector,
    pub catalog: &'a ServiceCatalog,
    /// Number of UEs on the train.
    pub users: usize,
}

pub trait CachePolicy {
    fn name(&self) -> &'static str;

    /// Called at the start of every episode.
    fn reset(&mut self) {}

    /// Returns the placement to install for the current period.
    fn place(&mut self, obs: &Observation<'_>) -> Result<CacheState>;
}
