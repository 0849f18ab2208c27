//! Built-in oracle and gradient checks behind `cfcache selftest`.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cache::{gather_set, CacheState, Topology};
use crate::catalog::{zipf_popularity, RequestVector, ServiceCatalog};
use crate::delay::{serve_period, DelayParams, DemandState};
use crate::nn::gradcheck::{central_difference, relative_error, STEP};
use crate::nn::{GaussianHead, Mlp};
use crate::policy::solve_total_allocation;
use crate::sac::{actor_loss_for, critic_loss_for, standard_normal, temperature_loss, Batch};

/// Largest accepted gradient mismatch.
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Best coverage objective over allocations on a `step` grid, by dynamic
/// programming over grid units of the shared budget.
pub fn grid_optimum(weights: &[f64], sizes: &[f64], aps: usize, c_ap: f64, step: f64) -> f64 {
    let units = (aps as f64 / step).round() as usize;
    let mut best = vec![0.0f64; units + 1];
    for (w, s) in weights.iter().zip(sizes) {
        let cap = ((s / c_ap) / step + 1e-9).floor() as usize;
        let mut next = best.clone();
        for used in 0..=units {
            for k in 1..=cap.min(used) {
                let gain = w * (c_ap * k as f64 * step / s).min(1.0);
                next[used] = next[used].max(best[used - k] + gain);
            }
        }
        best = next;
    }
    best.into_iter().fold(0.0, f64::max)
}

/// Greedy allocation against the grid optimum on random small instances.
pub fn hco_oracle(instances: usize, seed: u64) -> Check {
    const GRID: f64 = 0.02;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    for _ in 0..instances {
        let m = rng.random_range(1..=5);
        let aps = rng.random_range(1..=3);
        let c_ap = rng.random_range(1.0..10.0);
        let weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..10.0)).collect();
        let sizes: Vec<f64> = (0..m).map(|_| rng.random_range(1.0..20.0)).collect();
        let catalog = ServiceCatalog::from_sizes(sizes.clone(), 1.0, 1.0).expect("valid sizes");
        let greedy = solve_total_allocation(&weights, &catalog, aps, c_ap).objective(&weights, &catalog, c_ap);
        let grid = grid_optimum(&weights, &sizes, aps, c_ap, GRID);
        let slope = weights
            .iter()
            .zip(&sizes)
            .map(|(w, s)| w * c_ap / s)
            .fold(0.0, f64::max);
        let bound = slope * GRID * m as f64;
        let gap = greedy - grid;
        worst = worst.max(gap.abs() / bound.max(1e-12));
        if gap < -1e-9 || gap > bound + 1e-9 {
            failures += 1;
        }
    }
    Check {
        name: "hco-grid-oracle".into(),
        passed: failures == 0,
        detail: format!("{instances} instances, {failures} outside bound, worst gap/bound {worst:.3}"),
    }
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

fn grad_check(name: &str, errors: Vec<f64>) -> Check {
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let bad = errors.iter().filter(|e| !(**e < GRAD_TOL)).count();
    Check {
        name: name.into(),
        passed: bad == 0 && !errors.is_empty(),
        detail: format!("{} instances, worst relative error {worst:.2e}", errors.len()),
    }
}

fn tiny_batch(rng: &mut ChaCha8Rng, n: usize, sdim: usize, adim: usize) -> Batch {
    Batch {
        states: uniform(n, sdim, 0.0, 1.0, rng),
        actions: uniform(n, adim, -1.0, 1.0, rng),
        rewards: Array1::from_shape_simple_fn(n, || rng.random_range(0.0..1.0)),
        next_states: uniform(n, sdim, 0.0, 1.0, rng),
    }
}

/// Analytic against central-difference gradients for every trained loss.
pub fn gradient_suite(instances: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mlp, mut head, mut critic, mut actor, mut temp) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..instances {
        let sdim = rng.random_range(1..=4);
        let adim = rng.random_range(1..=3);
        let hidden = rng.random_range(2..=6);

        let net = Mlp::new(&[sdim, hidden, hidden, 2], &mut rng);
        let x = uniform(3, sdim, -1.0, 1.0, &mut rng);
        let g = uniform(3, 2, -1.0, 1.0, &mut rng);
        let fwd = net.forward(&x).expect("shapes agree");
        let (grads, dx) = net.backward(&fwd, &g);
        let mut probe = net.clone();
        let numeric = central_difference(&net.flatten(), STEP, |p| {
            probe.set_flat(p);
            (probe.forward(&x).expect("shapes agree").output() * &g).sum()
        });
        let numeric_x = central_difference(x.as_slice().expect("fresh array"), STEP, |v| {
            let xi = Array2::from_shape_vec(x.raw_dim(), v.to_vec()).expect("same shape");
            (net.forward(&xi).expect("shapes agree").output() * &g).sum()
        });
        mlp.push(relative_error(&grads.flatten(), &numeric).max(relative_error(&dx.iter().copied().collect::<Vec<_>>(), &numeric_x)));

        let out: Vec<f64> = (0..2 * adim)
            .map(|i| if i < adim { rng.random_range(-1.0..1.0) } else { rng.random_range(-1.5..0.5) })
            .collect();
        let noise: Vec<f64> = (0..adim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let sample = GaussianHead::from_output(&out).sample(&noise);
        let analytic = sample.backward(&vec![0.0; adim], 1.0).concat();
        let numeric = central_difference(&out, STEP, |o| GaussianHead::from_output(o).sample(&noise).log_prob);
        head.push(relative_error(&analytic, &numeric));

        let batch = tiny_batch(&mut rng, 4, sdim, adim);
        let q = Mlp::new(&[sdim + adim, hidden, 1], &mut rng);
        let y = Array1::from_shape_simple_fn(4, || rng.random_range(-1.0..2.0));
        let analytic = critic_loss_for(&q, &batch, &y).expect("shapes agree").grads.flatten();
        let mut probe = q.clone();
        let numeric = central_difference(&q.flatten(), STEP, |p| {
            probe.set_flat(p);
            critic_loss_for(&probe, &batch, &y).expect("shapes agree").loss
        });
        critic.push(relative_error(&analytic, &numeric));

        let pi = Mlp::new(&[sdim, hidden, 2 * adim], &mut rng);
        let q2 = Mlp::new(&[sdim + adim, hidden, 1], &mut rng);
        let eps = standard_normal(4, adim, &mut rng);
        let alpha = rng.random_range(0.0..1.0);
        let analytic = actor_loss_for(&pi, [&q, &q2], &batch.states, &eps, alpha)
            .expect("shapes agree")
            .grads
            .flatten();
        let mut probe = pi.clone();
        let numeric = central_difference(&pi.flatten(), STEP, |p| {
            probe.set_flat(p);
            actor_loss_for(&probe, [&q, &q2], &batch.states, &eps, alpha).expect("shapes agree").loss
        });
        actor.push(relative_error(&analytic, &numeric));

        let log_alpha = rng.random_range(-2.0..1.0);
        let lps: Vec<f64> = (0..4).map(|_| rng.random_range(-4.0..2.0)).collect();
        let target = -(adim as f64);
        let (_, analytic) = temperature_loss(log_alpha, &lps, target);
        let numeric = central_difference(&[log_alpha], STEP, |la| temperature_loss(la[0], &lps, target).0);
        temp.push(relative_error(&[analytic], &numeric));
    }
    vec![
        grad_check("grad-mlp", mlp),
        grad_check("grad-squashed-log-prob", head),
        grad_check("grad-critic", critic),
        grad_check("grad-actor", actor),
        grad_check("grad-temperature", temp),
    ]
}

/// Hand-computed model examples.
pub fn formula_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let mut check = |name: &str, passed: bool, detail: String| {
        out.push(Check {
            name: name.into(),
            passed,
            detail,
        })
    };

    let p = zipf_popularity(2, 1.0);
    check(
        "zipf-two-services",
        (p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12,
        format!("{p:?}"),
    );

    let cache = CacheState::from_rows(vec![vec![0.5], vec![0.5], vec![0.0]], 6.0).expect("valid rows");
    let topo = Topology::linear(3);
    let set = gather_set(2, 0, &cache, &topo, 6.0);
    check("gather-nearest-first", set == Some(vec![1, 0]), format!("{set:?}"));

    let catalog = ServiceCatalog::from_sizes(vec![10.0, 10.0, 10.0], 1.0, 1.0).expect("valid sizes");
    let demand = DemandState::new(RequestVector(vec![5, 3, 1]), vec![0, 0, 0]);
    let params = DelayParams {
        delta: 0.0,
        delta_prime: 0.1,
        rate: 1e12,
        tau: 2.5,
    };
    let empty = CacheState::empty(1, 3, 6.0);
    let outcome = serve_period(&demand, &empty, &Topology::linear(1), &catalog, &params);
    let ok = outcome
        .as_ref()
        .map(|o| o.served == vec![0, 1] && (o.qoe - 8.0 / 9.0).abs() < 1e-12)
        .unwrap_or(false);
    check("qoe-backhaul-only", ok, format!("{:?}", outcome.map(|o| (o.served, o.qoe))));
    out
}

pub fn run_all(seed: u64) -> Vec<Check> {
    let mut checks = vec![hco_oracle(500, seed)];
    checks.extend(gradient_suite(20, seed));
    checks.extend(formula_checks());
    checks
}
