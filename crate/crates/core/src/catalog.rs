//! Service catalog and per-period request generation.
//!
//! Every UE holds exactly one pending chunk request per period. A UE that was
//! served last period moves on to the next chunk of its service; a UE that
//! was not served loses one unit of patience and, once patience runs out,
//! abandons the service and draws a fresh one from the Zipf popularity law.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ServiceCatalog {
    /// Service sizes in Mbits.
    pub sizes: Vec<f64>,
    /// Mbits per chunk.
    pub chunk_size: f64,
    /// Chunks per service, `ceil(size / chunk_size)`.
    pub chunks: Vec<usize>,
    pub epsilon: f64,
    pub popularity: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

/// Zipf popularity `p_m = m^-eps / sum_m' m'^-eps` for ranks `1..=count`.
pub fn zipf_popularity(count: usize, epsilon: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=count).map(|m| (m as f64).powf(-epsilon)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

impl ServiceCatalog {
    /// Builds a catalog with sizes drawn uniformly from `size_range`.
    pub fn build(
        services: usize,
        size_range: (f64, f64),
        epsilon: f64,
        chunk_size: f64,
        seed: u64,
    ) -> Result<Self> {
        let (low, high) = size_range;
        if !(low > 0.0 && low <= high && high.is_finite()) {
            return Err(Error::config(format!(
                "service size range [{low}, {high}] must satisfy 0 < low <= high"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = (0..services)
            .map(|_| if low == high { low } else { rng.random_range(low..=high) })
            .collect();
        Self::from_sizes(sizes, epsilon, chunk_size)
    }

    pub fn from_sizes(sizes: Vec<f64>, epsilon: f64, chunk_size: f64) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::config("service count must be at least 1"));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::config(format!("zipf skewness {epsilon} must be >= 0")));
        }
        if !(chunk_size > 0.0 && chunk_size.is_finite()) {
            return Err(Error::config(format!("chunk size {chunk_size} must be > 0")));
        }
        if let Some(bad) = sizes.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::config(format!("service size {bad} must be > 0")));
        }
        let chunks = sizes
            .iter()
            .map(|s| ((s / chunk_size).ceil() as usize).max(1))
            .collect();
        let popularity = zipf_popularity(sizes.len(), epsilon);
        let sampler = WeightedIndex::new(&popularity)
            .map_err(|e| Error::config(format!("popularity vector: {e}")))?;
        Ok(Self {
            sizes,
            chunk_size,
            chunks,
            epsilon,
            popularity,
            sampler,
        })
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Draws a service index according to the popularity law.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserState {
    pub patience: u32,
    pub current_service: Option<usize>,
    pub next_chunk: usize,
}

impl UserState {
    /// A UE that has just picked a fresh service.
    pub fn fresh<R: Rng + ?Sized>(catalog: &ServiceCatalog, max_patience: u32, rng: &mut R) -> Self {
        let mut user = UserState {
            patience: 0,
            current_service: None,
            next_chunk: 0,
        };
        user.redraw(catalog, max_patience, rng);
        user
    }

    fn redraw<R: Rng + ?Sized>(&mut self, catalog: &ServiceCatalog, max_patience: u32, rng: &mut R) {
        self.current_service = Some(catalog.draw(rng));
        self.next_chunk = 0;
        self.patience = rng.random_range(1..=max_patience.max(1));
    }
}

/// Per-service requester counts for one period.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RequestVector(pub Vec<u64>);

impl RequestVector {
    pub fn zeros(services: usize) -> Self {
        RequestVector(vec![0; services])
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    /// Counts the pending request of every UE.
    pub fn count(users: &[UserState], services: usize) -> Self {
        let mut r = vec![0; services];
        for service in users.iter().filter_map(|u| u.current_service) {
            r[service] += 1;
        }
        RequestVector(r)
    }
}

/// Initial UE population: every UE draws a service and a patience budget.
pub fn init_users<R: Rng + ?Sized>(
    count: usize,
    catalog: &ServiceCatalog,
    max_patience: u32,
    rng: &mut R,
) -> Vec<UserState> {
    (0..count)
        .map(|_| UserState::fresh(catalog, max_patience, rng))
        .collect()
}

/// Advances every UE by one period given the services served last period,
/// then returns the new request vector.
///
/// `served_last[m]` is true when service `m` was delivered in the previous
/// period.
pub fn generate_requests<R: Rng + ?Sized>(
    users: &mut [UserState],
    catalog: &ServiceCatalog,
    served_last: &[bool],
    max_patience: u32,
    rng: &mut R,
) -> RequestVector {
    for user in users.iter_mut() {
        let Some(service) = user.current_service else {
            user.redraw(catalog, max_patience, rng);
            continue;
        };
        if served_last.get(service).copied().unwrap_or(false) {
            user.next_chunk += 1;
            if user.next_chunk >= catalog.chunks[service] {
                user.redraw(catalog, max_patience, rng);
            }
        } else {
            user.patience = user.patience.saturating_sub(1);
            if user.patience == 0 {
                user.redraw(catalog, max_patience, rng);
            }
        }
    }
    RequestVector::count(users, catalog.len())
}
