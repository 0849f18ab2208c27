//! Per-period service pipeline: priority accumulation, preparation delays
//! over fronthaul and backhaul, wireless download delay and QoE.

use crate::cache::{gather_set, recoverable, CacheState, Topology};
use crate::catalog::{RequestVector, ServiceCatalog};
use crate::error::{Error, Result};

/// Delay model coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayParams {
    /// Fronthaul scale coefficient, seconds per Mbit per unit weight.
    pub delta: f64,
    /// Backhaul scale coefficient, seconds per Mbit.
    pub delta_prime: f64,
    /// Effective RN download rate in Mbit/s.
    pub rate: f64,
    /// Period length in seconds.
    pub tau: f64,
}

impl DelayParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) {
            return Err(Error::config(format!("effective rate {} must be > 0", self.rate)));
        }
        if !(self.delta >= 0.0 && self.delta_prime >= 0.0) {
            return Err(Error::config("delay coefficients must be non-negative"));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::config(format!("period length {} must be >= 0", self.tau)));
        }
        Ok(())
    }
}

/// Demand entering one period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemandState {
    pub requests: RequestVector,
    /// Accumulated backlog weight carried in from the previous period.
    pub omega: Vec<u64>,
    /// Serving priority `u_m = r_m + omega_m`.
    pub priority: Vec<u64>,
}

impl DemandState {
    pub fn new(requests: RequestVector, omega: Vec<u64>) -> Self {
        let priority = requests
            .as_slice()
            .iter()
            .zip(&omega)
            .map(|(r, w)| r + w)
            .collect();
        DemandState {
            requests,
            omega,
            priority,
        }
    }

    pub fn total_priority(&self) -> u64 {
        self.priority.iter().sum()
    }
}

/// Accumulates backlog weight after a period has been served.
///
/// A service with pending priority that was not served this period stays
/// installed and accrues its current requests; every other service resets.
/// Returns `(omega, u)` where `u = r + prev_omega` is the priority the period
/// was served with.
pub fn update_priorities(
    prev_omega: &[u64],
    requests: &RequestVector,
    served: &[bool],
) -> (Vec<u64>, Vec<u64>) {
    let u: Vec<u64> = requests
        .as_slice()
        .iter()
        .zip(prev_omega)
        .map(|(r, w)| r + w)
        .collect();
    let omega = u
        .iter()
        .zip(prev_omega.iter().zip(requests.as_slice()))
        .zip(served)
        .map(|((u, (w, r)), served)| if *u > 0 && !served { w + r } else { 0 })
        .collect();
    (omega, u)
}

/// Per-AP bottleneck over a set of contributors, scaled to seconds.
fn fronthaul_over(
    service: usize,
    cache: &CacheState,
    topology: &Topology,
    delta: f64,
    contributors: impl Fn(usize) -> Vec<usize>,
) -> f64 {
    let worst = (0..cache.aps())
        .map(|ap| {
            contributors(ap)
                .into_iter()
                .map(|src| cache.get(src, service) * topology.lambda(src, ap))
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    delta * cache.c_ap * worst
}

/// Fronthaul gathering delay of a recoverable service; `None` when the full
/// AP set cannot recover it.
pub fn fronthaul_delay(
    service: usize,
    cache: &CacheState,
    topology: &Topology,
    size: f64,
    delta: f64,
) -> Option<f64> {
    if !recoverable(&cache.column(service), cache.c_ap, size) {
        return None;
    }
    Some(fronthaul_over(service, cache, topology, delta, |ap| {
        gather_set(ap, service, cache, topology, size).unwrap_or_default()
    }))
}

/// Backhaul fetch delay for the fragments not cached anywhere.
pub fn backhaul_delay(service: usize, cache: &CacheState, size: f64, delta_prime: f64) -> f64 {
    delta_prime * (size - cache.column_sum(service) * cache.c_ap).max(0.0)
}

/// Total response delay of one service with `chunks` chunk requests.
///
/// Services that cannot be recovered from the APs still gather every cached
/// fragment over the fronthaul; the shortfall comes over the backhaul.
pub fn total_delay(
    service: usize,
    cache: &CacheState,
    topology: &Topology,
    catalog: &ServiceCatalog,
    chunks: u64,
    params: &DelayParams,
) -> Result<f64> {
    if !(params.rate > 0.0) {
        return Err(Error::config(format!("effective rate {} must be > 0", params.rate)));
    }
    let size = catalog.sizes[service];
    let fronthaul = fronthaul_delay(service, cache, topology, size, params.delta).unwrap_or_else(|| {
        fronthaul_over(service, cache, topology, params.delta, |_| {
            (0..cache.aps()).filter(|&l| cache.get(l, service) > 0.0).collect()
        })
    });
    let backhaul = backhaul_delay(service, cache, size, params.delta_prime);
    let wireless = chunks as f64 * catalog.chunk_size / params.rate;
    Ok(fronthaul + backhaul + wireless)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodOutcome {
    /// Services delivered this period, in serving order.
    pub served: Vec<usize>,
    pub qoe: f64,
    /// True when the period carried no demand (QoE reported as 1).
    pub no_demand: bool,
    /// Candidate services in serving order with their response delays.
    pub delays: Vec<(usize, f64)>,
    /// Services with pending priority that did not fit in the period.
    pub stalled: Vec<usize>,
}

impl PeriodOutcome {
    pub fn served_mask(&self, services: usize) -> Vec<bool> {
        let mut mask = vec![false; services];
        for &m in &self.served {
            mask[m] = true;
        }
        mask
    }
}

/// Services with positive priority, highest first; ties go to the lower index.
pub fn serving_order(priority: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..priority.len()).filter(|&m| priority[m] > 0).collect();
    order.sort_by(|&a, &b| priority[b].cmp(&priority[a]).then(a.cmp(&b)));
    order
}

/// Length of the longest prefix of `delays` whose cumulative sum fits in `tau`.
pub fn fitting_prefix(delays: &[f64], tau: f64) -> usize {
    let mut elapsed = 0.0;
    for (i, d) in delays.iter().enumerate() {
        elapsed += d;
        if elapsed > tau {
            return i;
        }
    }
    delays.len()
}

/// Serves one period: orders services by priority, keeps the longest prefix
/// whose cumulative response delay fits in the period and scores QoE as the
/// share of priority weight that was served.
pub fn serve_period(
    demand: &DemandState,
    cache: &CacheState,
    topology: &Topology,
    catalog: &ServiceCatalog,
    params: &DelayParams,
) -> Result<PeriodOutcome> {
    params.validate()?;
    let order = serving_order(&demand.priority);
    let delays = order
        .iter()
        .map(|&m| {
            total_delay(m, cache, topology, catalog, demand.requests.0[m], params).map(|d| (m, d))
        })
        .collect::<Result<Vec<_>>>()?;
    let plain: Vec<f64> = delays.iter().map(|(_, d)| *d).collect();
    let fit = fitting_prefix(&plain, params.tau);
    let served: Vec<usize> = order[..fit].to_vec();
    let stalled: Vec<usize> = order[fit..].to_vec();

    let total = demand.total_priority();
    let (qoe, no_demand) = if total == 0 {
        (1.0, true)
    } else {
        let got: u64 = served.iter().map(|&m| demand.priority[m]).sum();
        (got as f64 / total as f64, false)
    };
    Ok(PeriodOutcome {
        served,
        qoe,
        no_demand,
        delays,
        stalled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(delta: f64, delta_prime: f64, rate: f64, tau: f64) -> DelayParams {
        DelayParams {
            delta,
            delta_prime,
            rate,
            tau,
        }
    }

    #[test]
    fn served_service_resets_priority() {
        let (omega, u) = update_priorities(&[4, 0], &RequestVector(vec![2, 0]), &[true, false]);
        assert_eq!(omega, vec![0, 0]);
        assert_eq!(u, vec![6, 0]);
    }

    #[test]
    fn backlog_accumulates_over_three_periods() {
        let mut omega = vec![0];
        for r in [2, 1, 4] {
            omega = update_priorities(&omega, &RequestVector(vec![r]), &[false]).0;
        }
        assert_eq!(omega, vec![7]);
    }

    #[test]
    fn backhaul_examples() {
        let cat = ServiceCatalog::from_sizes(vec![15.0], 1.0, 1.0).unwrap();
        let mut cache = CacheState::empty(3, 1, 6.0);
        assert_eq!(backhaul_delay(0, &cache, 15.0, 0.01), 0.01 * 15.0);
        cache.set(0, 0, 1.0);
        cache.set(1, 0, 1.0);
        let d = backhaul_delay(0, &cache, cat.sizes[0], 0.01);
        assert!((d - 0.03).abs() < 1e-12);
        cache.set(2, 0, 1.0);
        assert_eq!(backhaul_delay(0, &cache, 15.0, 0.01), 0.0);
    }

    #[test]
    fn fronthaul_vanishes_for_local_copies_and_zero_scale() {
        let topo = Topology::linear(3);
        let mut cache = CacheState::empty(3, 1, 6.0);
        for l in 0..3 {
            cache.set(l, 0, 0.5);
        }
        assert_eq!(fronthaul_delay(0, &cache, &topo, 3.0, 0.005), Some(0.0));
        assert_eq!(fronthaul_delay(0, &cache, &topo, 9.0, 0.0), Some(0.0));
        assert_eq!(fronthaul_delay(0, &cache, &topo, 10.0, 0.005), None);
    }

    #[test]
    fn fronthaul_two_ap_instance() {
        let topo = Topology::linear(2);
        let mut cache = CacheState::empty(2, 1, 6.0);
        cache.set(0, 0, 0.8);
        // AP 1 gathers from AP 0 at weight 1/2: 0.005 * 6 * 0.8 * 0.5.
        let d = fronthaul_delay(0, &cache, &topo, 4.0, 0.005).unwrap();
        assert!((d - 0.012).abs() < 1e-15);
    }

    #[test]
    fn total_delay_examples() {
        let topo = Topology::linear(3);
        let cat = ServiceCatalog::from_sizes(vec![15.0], 1.0, 1.0).unwrap();
        let empty = CacheState::empty(3, 1, 6.0);
        let p = params(0.005, 0.01, 2.0, 5.0);
        let d = total_delay(0, &empty, &topo, &cat, 4, &p).unwrap();
        assert!((d - (0.01 * 15.0 + 2.0)).abs() < 1e-12);
        let d = total_delay(0, &empty, &topo, &cat, 6, &params(0.0, 0.0, 2.0, 5.0)).unwrap();
        assert!((d - 3.0).abs() < 1e-12);
        assert!(total_delay(0, &empty, &topo, &cat, 1, &params(0.0, 0.0, 0.0, 5.0)).is_err());

        let small = ServiceCatalog::from_sizes(vec![6.0], 1.0, 1.0).unwrap();
        let mut full = CacheState::empty(3, 1, 6.0);
        for l in 0..3 {
            full.set(l, 0, 1.0);
        }
        assert_eq!(total_delay(0, &full, &topo, &small, 0, &p).unwrap(), 0.0);
    }

    #[test]
    fn unrecoverable_service_gathers_existing_fragments() {
        let topo = Topology::linear(2);
        let cat = ServiceCatalog::from_sizes(vec![10.0], 1.0, 1.0).unwrap();
        let mut cache = CacheState::empty(2, 1, 6.0);
        cache.set(0, 0, 0.5);
        let p = params(0.1, 0.01, 2.0, 5.0);
        let d = total_delay(0, &cache, &topo, &cat, 0, &p).unwrap();
        // Fronthaul: AP 1 pulls 0.5 at weight 1/2; backhaul covers 7 Mbits.
        let want = 0.1 * 6.0 * 0.5 * 0.5 + 0.01 * 7.0;
        assert!((d - want).abs() < 1e-12);
    }

    #[test]
    fn prefix_rule_and_qoe() {
        // Backhaul-only delays (4, 5, 5) against tau = 10 give 0.4, 0.5, 0.5 of tau.
        let cat = ServiceCatalog::from_sizes(vec![4.0, 5.0, 5.0], 1.0, 1e-9).unwrap();
        let topo = Topology::linear(1);
        let cache = CacheState::empty(1, 3, 6.0);
        let demand = DemandState::new(RequestVector(vec![5, 3, 1]), vec![0, 0, 0]);
        let out = serve_period(&demand, &cache, &topo, &cat, &params(0.0, 1.0, 1.0, 10.0)).unwrap();
        assert_eq!(out.served, vec![0, 1]);
        assert_eq!(out.stalled, vec![2]);
        assert!((out.qoe - 8.0 / 9.0).abs() < 1e-12);

        let all = serve_period(&demand, &cache, &topo, &cat, &params(0.0, 1.0, 1.0, 1e9)).unwrap();
        assert_eq!(all.qoe, 1.0);
        assert!(all.stalled.is_empty());
        let none = serve_period(&demand, &cache, &topo, &cat, &params(0.0, 1.0, 1.0, 0.0)).unwrap();
        assert_eq!(none.qoe, 0.0);
    }

    #[test]
    fn zero_demand_is_flagged() {
        let cat = ServiceCatalog::from_sizes(vec![4.0], 1.0, 1.0).unwrap();
        let demand = DemandState::new(RequestVector(vec![0]), vec![0]);
        let out = serve_period(
            &demand,
            &CacheState::empty(1, 1, 6.0),
            &Topology::linear(1),
            &cat,
            &params(0.0, 1.0, 1.0, 1.0),
        )
        .unwrap();
        assert!(out.no_demand);
        assert_eq!(out.qoe, 1.0);
    }

    #[test]
    fn order_breaks_ties_by_index() {
        assert_eq!(serving_order(&[3, 5, 3, 0, 5]), vec![1, 4, 0, 2]);
    }
}
