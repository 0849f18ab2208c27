//! Cache-fraction state of the serving APs, the fragment recovery rule and
//! the two coverage metrics.
//!
//! `chi[l][m]` is the fraction of AP `l`'s cache holding coded fragments of
//! service `m`. Any collection of fragments totalling `s_m` Mbits recovers
//! the service, so only the summed coverage `c_ap * sum_l chi[l][m]` matters
//! for recovery; which APs contribute matters for the fronthaul delay.

use std::io::Write;
use std::path::Path;

use crate::catalog::{RequestVector, ServiceCatalog};
use crate::error::{Error, Result};

/// Absolute slack (Mbits) when comparing gathered fragments against a size.
pub const RECOVERY_TOL: f64 = 1e-9;

/// Slack allowed on a row sum before it counts as over-full.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheState {
    aps: usize,
    services: usize,
    chi: Vec<f64>,
    /// Cache capacity of each AP in Mbits.
    pub c_ap: f64,
}

impl CacheState {
    pub fn empty(aps: usize, services: usize, c_ap: f64) -> Self {
        CacheState {
            aps,
            services,
            chi: vec![0.0; aps * services],
            c_ap,
        }
    }

    /// Wraps a row-major matrix without projecting it.
    pub fn from_rows(rows: Vec<Vec<f64>>, c_ap: f64) -> Result<Self> {
        let aps = rows.len();
        let services = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != services) {
            return Err(Error::Shape("cache rows have unequal lengths".into()));
        }
        Ok(CacheState {
            aps,
            services,
            chi: rows.into_iter().flatten().collect(),
            c_ap,
        })
    }

    pub fn aps(&self) -> usize {
        self.aps
    }

    pub fn services(&self) -> usize {
        self.services
    }

    pub fn get(&self, ap: usize, service: usize) -> f64 {
        self.chi[ap * self.services + service]
    }

    pub fn set(&mut self, ap: usize, service: usize, value: f64) {
        self.chi[ap * self.services + service] = value;
    }

    pub fn row(&self, ap: usize) -> &[f64] {
        &self.chi[ap * self.services..(ap + 1) * self.services]
    }

    pub fn row_mut(&mut self, ap: usize) -> &mut [f64] {
        &mut self.chi[ap * self.services..(ap + 1) * self.services]
    }

    /// Row-major view of the whole matrix.
    pub fn as_slice(&self) -> &[f64] {
        &self.chi
    }

    pub fn column(&self, service: usize) -> Vec<f64> {
        (0..self.aps).map(|l| self.get(l, service)).collect()
    }

    /// `sum_l chi[l][m]`.
    pub fn column_sum(&self, service: usize) -> f64 {
        (0..self.aps).map(|l| self.get(l, service)).sum()
    }

    /// Fraction of service `m` covered by the cached fragments, capped at 1.
    pub fn coverage(&self, service: usize, size: f64) -> f64 {
        (self.c_ap * self.column_sum(service) / size).min(1.0)
    }

    /// Checks every row sums to at most one and every entry lies in [0, 1].
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for l in 0..self.aps {
            let row = self.row(l);
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(format!("ap {l}: entry {v} outside [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + ROW_SUM_TOL {
                return Err(format!("ap {l}: row sum {sum} exceeds 1"));
            }
        }
        Ok(())
    }

    /// Installs a policy output after projecting it onto the feasible set:
    /// entries clamp to [0, 1], then rows summing above one are rescaled to
    /// sum exactly one. Under-full rows are kept.
    pub fn apply_fraction_update(&mut self, new_chi: &CacheState) -> Result<()> {
        if new_chi.aps != self.aps || new_chi.services != self.services {
            return Err(Error::Shape(format!(
                "placement is {}x{}, cache is {}x{}",
                new_chi.aps, new_chi.services, self.aps, self.services
            )));
        }
        if new_chi.chi.iter().any(|v| !v.is_finite()) {
            return Err(Error::PolicyOutput("placement contains NaN or infinite entries".into()));
        }
        self.chi.copy_from_slice(&new_chi.chi);
        self.project();
        Ok(())
    }

    pub(crate) fn project(&mut self) {
        for l in 0..self.aps {
            let row = self.row_mut(l);
            for v in row.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 {
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
    }

    /// Moves the serving window forward by `advance` APs: the first rows
    /// depart, the remaining rows shift toward index 0 and the entering APs
    /// start with empty caches.
    pub fn slide(&mut self, advance: usize) {
        let shift = advance.min(self.aps) * self.services;
        self.chi.copy_within(shift.., 0);
        let keep = self.chi.len() - shift;
        self.chi[keep..].iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut text = String::from("ap");
        for m in 0..self.services {
            text.push_str(&format!(",svc_{m}"));
        }
        text.push('\n');
        for l in 0..self.aps {
            text.push_str(&format!("ap_{l}"));
            for v in self.row(l) {
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
        }
        out.write_all(text.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Linear trackside deployment: APs at unit spacing, fronthaul weight
/// `lambda[a][b] = |a - b| / L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    aps: usize,
    lambda: Vec<f64>,
    orders: Vec<Vec<usize>>,
}

impl Topology {
    pub fn linear(aps: usize) -> Self {
        let n = aps.max(1) as f64;
        let lambda = (0..aps)
            .flat_map(|a| (0..aps).map(move |b| a.abs_diff(b) as f64 / n))
            .collect::<Vec<f64>>();
        let orders = (0..aps)
            .map(|ap| {
                let mut order: Vec<usize> = (0..aps).collect();
                order.sort_by(|&a, &b| {
                    lambda[a * aps + ap]
                        .total_cmp(&lambda[b * aps + ap])
                        .then(a.cmp(&b))
                });
                order
            })
            .collect();
        Topology { aps, lambda, orders }
    }

    pub fn aps(&self) -> usize {
        self.aps
    }

    /// Weight between AP `from` and AP `to`.
    pub fn lambda(&self, from: usize, to: usize) -> f64 {
        self.lambda[from * self.aps + to]
    }

    /// All APs ordered by increasing distance from `ap` (ties: lower index).
    pub fn nearest_first(&self, ap: usize) -> &[usize] {
        &self.orders[ap]
    }
}

/// True iff the fragments of one service across all APs add up to its size.
pub fn recoverable(column: &[f64], c_ap: f64, size: f64) -> bool {
    column.iter().sum::<f64>() * c_ap + RECOVERY_TOL >= size
}

/// Smallest nearest-first set of fragment holders from which AP `ap` can
/// recover service `service`, or `None` when even every AP together falls
/// short.
pub fn gather_set(
    ap: usize,
    service: usize,
    cache: &CacheState,
    topology: &Topology,
    size: f64,
) -> Option<Vec<usize>> {
    let mut gathered = 0.0;
    let mut set = Vec::new();
    for &l in topology.nearest_first(ap) {
        let frac = cache.get(l, service);
        if frac <= 0.0 {
            continue;
        }
        set.push(l);
        gathered += frac * cache.c_ap;
        if gathered + RECOVERY_TOL >= size {
            return Some(set);
        }
    }
    None
}

/// Request-weighted coverage, normalised by the UE count.
pub fn hit_probability_request(
    cache: &CacheState,
    requests: &RequestVector,
    catalog: &ServiceCatalog,
    users: usize,
) -> f64 {
    if users == 0 {
        return 0.0;
    }
    let covered: f64 = requests
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 0)
        .map(|(m, r)| *r as f64 * cache.coverage(m, catalog.sizes[m]))
        .sum();
    covered / users as f64
}

/// Priority-weighted coverage using weights `r_m + omega_m`. Returns `None`
/// when there is no demand at all.
pub fn hit_probability_qoe(
    cache: &CacheState,
    requests: &RequestVector,
    omega: &[u64],
    catalog: &ServiceCatalog,
) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (m, (r, w)) in requests.as_slice().iter().zip(omega).enumerate() {
        let weight = (r + w) as f64;
        if weight > 0.0 {
            num += weight * cache.coverage(m, catalog.sizes[m]);
            den += weight;
        }
    }
    (den > 0.0).then(|| num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_cache(col: &[f64], c_ap: f64) -> CacheState {
        CacheState::from_rows(col.iter().map(|v| vec![*v]).collect(), c_ap).unwrap()
    }

    #[test]
    fn recovery_boundaries() {
        let mut col = vec![0.0; 5];
        col[0] = 1.0;
        col[1] = 1.0;
        assert!(recoverable(&col, 6.0, 12.0));
        assert!(!recoverable(&col, 6.0, 13.0));
        assert!(!recoverable(&[0.0; 5], 6.0, 0.5));
    }

    #[test]
    fn gather_local_hit() {
        let cache = column_cache(&[1.0, 0.2, 0.0], 6.0);
        let topo = Topology::linear(3);
        assert_eq!(gather_set(0, 0, &cache, &topo, 6.0), Some(vec![0]));
    }

    #[test]
    fn gather_nothing_cached() {
        let cache = column_cache(&[0.0, 0.0, 0.0], 6.0);
        let topo = Topology::linear(3);
        assert_eq!(gather_set(1, 0, &cache, &topo, 1.0), None);
    }

    #[test]
    fn gather_three_halves() {
        let cache = column_cache(&[0.5, 0.5, 0.5], 6.0);
        let topo = Topology::linear(3);
        // 3 + 3 + 3 = 9 Mbits < 10.
        assert_eq!(gather_set(0, 0, &cache, &topo, 10.0), None);
        assert_eq!(gather_set(0, 0, &cache, &topo, 6.0), Some(vec![0, 1]));
        // Middle AP: both neighbours equidistant, lower index first.
        assert_eq!(gather_set(1, 0, &cache, &topo, 6.0), Some(vec![1, 0]));
        assert_eq!(gather_set(2, 0, &cache, &topo, 9.0), Some(vec![2, 1, 0]));
    }

    #[test]
    fn topology_weights() {
        let t = Topology::linear(4);
        assert_eq!(t.lambda(2, 2), 0.0);
        assert_eq!(t.lambda(0, 3), 0.75);
        assert_eq!(t.lambda(3, 0), t.lambda(0, 3));
        assert_eq!(t.nearest_first(2), &[2, 1, 3, 0]);
    }

    #[test]
    fn hit_probability_request_examples() {
        let cat = ServiceCatalog::from_sizes(vec![12.0, 12.0], 1.0, 1.0).unwrap();
        let empty = CacheState::empty(2, 2, 6.0);
        let r = RequestVector(vec![1, 1]);
        assert_eq!(hit_probability_request(&empty, &r, &cat, 2), 0.0);

        let cache = CacheState::from_rows(vec![vec![0.5, 1.0], vec![0.5, 1.0]], 6.0).unwrap();
        let h = hit_probability_request(&cache, &r, &cat, 2);
        assert!((h - 0.75).abs() < 1e-12);
    }

    #[test]
    fn hit_probability_qoe_examples() {
        let cat = ServiceCatalog::from_sizes(vec![12.0, 6.0], 1.0, 1.0).unwrap();
        // Coverage: service 0 -> 6/12 = 0.5, service 1 -> 6/6 = 1.
        let cache = CacheState::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]], 6.0).unwrap();
        let h = hit_probability_qoe(&cache, &RequestVector(vec![2, 0]), &[0, 3], &cat).unwrap();
        assert!((h - 0.8).abs() < 1e-12);
        assert_eq!(hit_probability_qoe(&cache, &RequestVector(vec![0, 0]), &[0, 0], &cat), None);

        let r = RequestVector(vec![3, 1]);
        let hq = hit_probability_qoe(&cache, &r, &[0, 0], &cat).unwrap();
        let hr = hit_probability_request(&cache, &r, &cat, 4);
        assert!((hq - hr).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let mut cache = CacheState::empty(1, 2, 6.0);
        let feasible = CacheState::from_rows(vec![vec![0.3, 0.7]], 6.0).unwrap();
        cache.apply_fraction_update(&feasible).unwrap();
        assert_eq!(cache, feasible);

        cache
            .apply_fraction_update(&CacheState::from_rows(vec![vec![0.8, 0.8]], 6.0).unwrap())
            .unwrap();
        assert_eq!(cache.row(0), &[0.5, 0.5]);

        cache
            .apply_fraction_update(&CacheState::from_rows(vec![vec![-0.2, 0.5]], 6.0).unwrap())
            .unwrap();
        assert_eq!(cache.row(0), &[0.0, 0.5]);

        let nan = CacheState::from_rows(vec![vec![f64::NAN, 0.5]], 6.0).unwrap();
        assert!(matches!(
            cache.apply_fraction_update(&nan),
            Err(Error::PolicyOutput(_))
        ));
    }

    #[test]
    fn slide_shifts_rows_and_empties_entering_aps() {
        let mut cache =
            CacheState::from_rows(vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.5]], 6.0).unwrap();
        cache.slide(1);
        assert_eq!(cache.row(0), &[0.3, 0.4]);
        assert_eq!(cache.row(1), &[0.5, 0.5]);
        assert_eq!(cache.row(2), &[0.0, 0.0]);
        cache.slide(0);
        assert_eq!(cache.row(0), &[0.3, 0.4]);
        cache.slide(3);
        assert!(cache.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn csv_dump_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.csv");
        let cache = CacheState::from_rows(vec![vec![0.25, 0.5], vec![1.0, 0.0]], 6.0).unwrap();
        cache.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "ap,svc_0,svc_1\nap_0,0.25,0.5\nap_1,1,0\n");
    }
}
