//! Heuristic convex-optimisation placement.
//!
//! Maximises the request-weighted coverage `sum_m w_m min(c_ap x_m / s_m, 1)`
//! over the total per-service fractions `x_m = sum_l chi[l][m]`, subject to
//! the global budget `sum_m x_m <= L`. The objective is separable and each
//! term is linear up to its cap, so filling services in decreasing order of
//! marginal value `w_m c_ap / s_m` is optimal (fractional knapsack).

use std::collections::VecDeque;

use crate::cache::CacheState;
use crate::catalog::{RequestVector, ServiceCatalog};
use crate::error::Result;

use super::{CachePolicy, Observation};

/// Sliding window over the last `capacity` request vectors.
#[derive(Debug, Clone)]
pub struct RequestHistory {
    capacity: usize,
    window: VecDeque<Vec<u64>>,
    aggregate: Vec<u64>,
}

impl RequestHistory {
    pub fn new(capacity: usize, services: usize) -> Self {
        RequestHistory {
            capacity: capacity.max(1),
            window: VecDeque::with_capacity(capacity.max(1)),
            aggregate: vec![0; services],
        }
    }

    pub fn push(&mut self, requests: &RequestVector) {
        if self.window.len() == self.capacity {
            if let Some(old) = self.window.pop_front() {
                for (a, o) in self.aggregate.iter_mut().zip(old) {
                    *a -= o;
                }
            }
        }
        for (a, r) in self.aggregate.iter_mut().zip(requests.as_slice()) {
            *a += r;
        }
        self.window.push_back(requests.0.clone());
    }

    pub fn aggregate(&self) -> &[u64] {
        &self.aggregate
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn clear(&mut self) {
        self.window.clear();
        self.aggregate.iter_mut().for_each(|a| *a = 0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// Total cache fraction per service, summed over APs.
    pub x: Vec<f64>,
    /// Set when every weight was zero and nothing was allocated.
    pub degenerate: bool,
}

impl Allocation {
    pub fn objective(&self, weights: &[f64], catalog: &ServiceCatalog, c_ap: f64) -> f64 {
        weights
            .iter()
            .zip(&self.x)
            .zip(&catalog.sizes)
            .map(|((w, x), s)| w * (c_ap * x / s).min(1.0))
            .sum()
    }
}

/// Exact solution of the coverage-maximisation subproblem.
pub fn solve_total_allocation(
    weights: &[f64],
    catalog: &ServiceCatalog,
    aps: usize,
    c_ap: f64,
) -> Allocation {
    let services = catalog.len();
    let mut x = vec![0.0; services];
    if weights.iter().all(|w| *w <= 0.0) {
        return Allocation { x, degenerate: true };
    }
    let value = |m: usize| weights[m] * c_ap / catalog.sizes[m];
    let mut order: Vec<usize> = (0..services).filter(|&m| weights[m] > 0.0).collect();
    order.sort_by(|&a, &b| value(b).total_cmp(&value(a)).then(a.cmp(&b)));

    let mut budget = aps as f64;
    for m in order {
        if budget <= 0.0 {
            break;
        }
        let cap = catalog.sizes[m] / c_ap;
        let take = cap.min(budget);
        x[m] = take;
        budget -= take;
    }
    Allocation {
        x,
        degenerate: false,
    }
}

/// Places the HCO solution, splitting each service's total evenly over APs.
/// An empty history falls back to popularity weights.
pub fn hco_place(history: &RequestHistory, catalog: &ServiceCatalog, aps: usize, c_ap: f64) -> CacheState {
    let weights: Vec<f64> = if history.is_empty() {
        catalog.popularity.clone()
    } else {
        history.aggregate().iter().map(|&a| a as f64).collect()
    };
    let alloc = solve_total_allocation(&weights, catalog, aps, c_ap);
    let mut cache = CacheState::empty(aps, catalog.len(), c_ap);
    let share = 1.0 / aps as f64;
    for l in 0..aps {
        for (m, x) in alloc.x.iter().enumerate() {
            cache.set(l, m, x * share);
        }
    }
    cache
}

#[derive(Debug, Clone)]
pub struct Hco {
    history: RequestHistory,
}

impl Hco {
    pub fn new(window: usize, services: usize) -> Self {
        Hco {
            history: RequestHistory::new(window, services),
        }
    }

    pub fn history(&self) -> &RequestHistory {
        &self.history
    }
}

impl CachePolicy for Hco {
    fn name(&self) -> &'static str {
        "hco"
    }

    fn reset(&mut self) {
        self.history.clear();
    }

    fn place(&mut self, obs: &Observation<'_>) -> Result<CacheState> {
        self.history.push(obs.requests);
        Ok(hco_place(&self.history, obs.catalog, obs.cache.aps(), obs.cache.c_ap))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Best objective over allocations on a `step` grid, by dynamic
    /// programming across services (exact over the grid).
    fn grid_optimum(weights: &[f64], sizes: &[f64], aps: usize, c_ap: f64, step: f64) -> f64 {
        let units = (aps as f64 / step).round() as usize;
        let mut best = vec![0.0f64; units + 1];
        for (w, s) in weights.iter().zip(sizes) {
            let cap_units = ((s / c_ap) / step + 1e-9).floor() as usize;
            let mut next = best.clone();
            for used in 0..=units {
                for k in 1..=cap_units.min(used) {
                    let gain = w * (c_ap * k as f64 * step / s).min(1.0);
                    next[used] = next[used].max(best[used - k] + gain);
                }
            }
            best = next;
        }
        best.into_iter().fold(0.0, f64::max)
    }

    fn brute_two(weights: [f64; 2], sizes: [f64; 2], aps: usize, c_ap: f64) -> f64 {
        let mut best = 0.0f64;
        for i in 0..=100 {
            for j in 0..=100 {
                let (a, b) = (i as f64 * 0.01, j as f64 * 0.01);
                if a > sizes[0] / c_ap + 1e-12 || b > sizes[1] / c_ap + 1e-12 || a + b > aps as f64 + 1e-12 {
                    continue;
                }
                let v = weights[0] * (c_ap * a / sizes[0]).min(1.0) + weights[1] * (c_ap * b / sizes[1]).min(1.0);
                best = best.max(v);
            }
        }
        best
    }

    #[test]
    fn two_service_examples() {
        let cat = ServiceCatalog::from_sizes(vec![6.0, 6.0], 1.0, 1.0).unwrap();
        let a = solve_total_allocation(&[3.0, 1.0], &cat, 1, 6.0);
        assert_eq!(a.x, vec![1.0, 0.0]);
        assert!((a.objective(&[3.0, 1.0], &cat, 6.0) - brute_two([3.0, 1.0], [6.0, 6.0], 1, 6.0)).abs() < 1e-9);

        let cat = ServiceCatalog::from_sizes(vec![6.0, 12.0], 1.0, 1.0).unwrap();
        let a = solve_total_allocation(&[1.0, 1.0], &cat, 1, 6.0);
        assert_eq!(a.x, vec![1.0, 0.0]);
        assert!((a.objective(&[1.0, 1.0], &cat, 6.0) - brute_two([1.0, 1.0], [6.0, 12.0], 1, 6.0)).abs() < 1e-9);
    }

    #[test]
    fn ample_budget_caches_everything() {
        let cat = ServiceCatalog::from_sizes(vec![10.0, 12.0, 20.0], 1.0, 1.0).unwrap();
        let w = [2.0, 1.0, 5.0];
        let a = solve_total_allocation(&w, &cat, 10, 6.0);
        for (x, s) in a.x.iter().zip(&cat.sizes) {
            assert!((x - s / 6.0).abs() < 1e-12);
        }
        assert!((a.objective(&w, &cat, 6.0) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let cat = ServiceCatalog::from_sizes(vec![10.0, 12.0], 1.0, 1.0).unwrap();
        let a = solve_total_allocation(&[0.0, 0.0], &cat, 2, 6.0);
        assert!(a.degenerate);
        assert_eq!(a.x, vec![0.0, 0.0]);
    }

    #[test]
    fn dp_oracle_agrees_with_naive_enumeration() {
        let w = [2.0, 0.7];
        let s = [7.0, 3.0];
        let dp = grid_optimum(&w, &s, 1, 6.0, 0.01);
        assert!((dp - brute_two(w, s, 1, 6.0)).abs() < 1e-9);
    }

    #[test]
    fn single_requested_service_is_fully_cached() {
        let cat = ServiceCatalog::from_sizes(vec![12.0, 10.0, 15.0], 1.1, 1.0).unwrap();
        let mut h = RequestHistory::new(5, 3);
        h.push(&RequestVector(vec![0, 4, 0]));
        let cache = hco_place(&h, &cat, 3, 6.0);
        assert!((cache.column_sum(1) * 6.0 - 10.0).abs() < 1e-12);
        assert_eq!(cache.column_sum(0), 0.0);
        assert_eq!(cache.column_sum(2), 0.0);
        cache.check_invariants().unwrap();
    }

    #[test]
    fn history_evicts_oldest() {
        let mut h = RequestHistory::new(2, 2);
        h.push(&RequestVector(vec![1, 0]));
        assert_eq!(h.aggregate(), &[1, 0]);
        h.push(&RequestVector(vec![0, 2]));
        h.push(&RequestVector(vec![0, 3]));
        assert_eq!(h.aggregate(), &[0, 5]);
        assert_eq!(h.len(), 2);
    }

    proptest! {
        #[test]
        fn greedy_matches_grid_oracle(
            weights in proptest::collection::vec(0.0f64..10.0, 1..=4),
            sizes in proptest::collection::vec(2.0f64..20.0, 4),
            aps in 1usize..=3,
        ) {
            let sizes = &sizes[..weights.len()];
            let cat = ServiceCatalog::from_sizes(sizes.to_vec(), 1.0, 1.0).unwrap();
            let alloc = solve_total_allocation(&weights, &cat, aps, 6.0);
            let got = alloc.objective(&weights, &cat, 6.0);
            let grid = grid_optimum(&weights, sizes, aps, 6.0, 0.05);
            let slack = weights.iter().zip(sizes).map(|(w, s)| w * 6.0 / s).fold(0.0, f64::max)
                * 0.05 * weights.len() as f64;
            prop_assert!(got + 1e-9 >= grid);
            prop_assert!(got <= grid + slack + 1e-9);
            let used: f64 = alloc.x.iter().sum();
            prop_assert!(used <= aps as f64 + 1e-9);
            for (x, s) in alloc.x.iter().zip(sizes) {
                prop_assert!(*x <= s / 6.0 + 1e-9);
            }
        }

        #[test]
        fn allocation_is_scale_invariant(
            weights in proptest::collection::vec(0.0f64..10.0, 5),
            scale in 0.01f64..100.0,
        ) {
            let cat = ServiceCatalog::from_sizes(vec![10.0, 12.0, 14.0, 16.0, 18.0], 1.0, 1.0).unwrap();
            let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
            let a = solve_total_allocation(&weights, &cat, 3, 6.0);
            let b = solve_total_allocation(&scaled, &cat, 3, 6.0);
            prop_assert_eq!(a.x, b.x);
        }

        #[test]
        fn aggregate_matches_recomputed_sum(
            pushes in proptest::collection::vec(proptest::collection::vec(0u64..20, 3), 0..30),
            cap in 1usize..8,
        ) {
            let mut h = RequestHistory::new(cap, 3);
            for p in &pushes {
                h.push(&RequestVector(p.clone()));
            }
            let start = pushes.len().saturating_sub(cap);
            let mut naive = vec![0u64; 3];
            for p in &pushes[start..] {
                for (n, v) in naive.iter_mut().zip(p) {
                    *n += v;
                }
            }
            prop_assert_eq!(h.aggregate(), &naive[..]);
        }
    }
}
