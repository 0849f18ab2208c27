//! Command-line front end.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cache::CacheState;
use crate::catalog::ServiceCatalog;
use crate::config::{PolicyKind, SimConfig};
use crate::error::{Error, Result};
use crate::metrics::{mean_and_se, median, write_csv, write_metrics, Format, MetricsRow};
use crate::nn::Checkpoint;
use crate::sac::{EpisodeLog, SacAgent};
use crate::sim::{build_policy, run_episode, train_agent, World};

pub const BUILD_TAG: &str = match option_env!("CFCACHE_BUILD_TAG") {
    Some(tag) => tag,
    None => env!("CARGO_PKG_VERSION"),
};

#[derive(Debug, Parser)]
#[command(name = "cfcache", version = BUILD_TAG, about = "Edge-caching simulator for a cell-free railway network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one policy and write per-period metrics.
    Simulate(SimulateArgs),
    /// Run several policies on the same seeds.
    Compare(CompareArgs),
    /// Train a SAC agent.
    Train(TrainArgs),
    /// Measure per-period decision time across catalog sizes.
    Bench(BenchArgs),
    /// Run the built-in oracle and gradient checks.
    Selftest(SelftestArgs),
}

/// Flags shared by every run command. Flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub aps: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub cache_mbits: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub history_window: Option<usize>,
    /// Output directory.
    #[arg(long, env = "CFCACHE_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Record wall-clock decision times in the metrics.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub policy: Option<PolicyKind>,
    #[arg(long)]
    pub services: Option<usize>,
    /// Replay a previous run from its manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Write the installed cache of every period.
    #[arg(long)]
    pub dump_cache: bool,
    #[arg(long)]
    pub load_agent: Option<PathBuf>,
    #[arg(long)]
    pub save_agent: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "etahc,hco,sac")]
    pub policies: Vec<PolicyKind>,
    #[arg(long)]
    pub services: Option<usize>,
    /// Seed range `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "1..20")]
    pub seeds: SeedList,
    #[arg(long)]
    pub load_agent: Option<PathBuf>,
    #[arg(long)]
    pub save_agent: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub services: Option<usize>,
    #[arg(long)]
    pub save_agent: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "hco,sac")]
    pub policy: Vec<PolicyKind>,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30")]
    pub services: Vec<usize>,
    /// Timed decision calls per configuration.
    #[arg(long, default_value_t = 100)]
    pub calls: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl std::str::FromStr for SeedList {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("seeds: cannot parse {s:?} (expected a..b or a,b,c)"));
        if let Some((a, b)) = s.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            return Ok(SeedList((a..=b).collect()));
        }
        let seeds = s
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<Vec<u64>>>()?;
        if seeds.is_empty() {
            return Err(bad());
        }
        Ok(SeedList(seeds))
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub policy: String,
    pub seed: u64,
    pub build: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config: SimConfig,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        m.config.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("manifest serialises");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Config file (or manifest) first, then flags on top.
fn resolve(base: Option<SimConfig>, run: &RunArgs, services: Option<usize>) -> Result<SimConfig> {
    let mut cfg = match (base, &run.config) {
        (Some(cfg), _) => cfg,
        (None, Some(path)) => SimConfig::load(path)?,
        (None, None) => SimConfig::default(),
    };
    if let Some(v) = run.seed {
        cfg.seed = v;
    }
    if let Some(v) = run.episodes {
        cfg.episodes = v;
    }
    if let Some(v) = run.aps {
        cfg.aps = v;
    }
    if let Some(v) = run.users {
        cfg.users = v;
    }
    if let Some(v) = services {
        cfg.services = v;
    }
    if let Some(v) = run.cache_mbits {
        cfg.cache_mbits = v;
    }
    if let Some(v) = run.tau {
        cfg.tau = v;
    }
    if let Some(v) = run.history_window {
        cfg.history_window = v;
    }
    if run.timing {
        cfg.record_timing = true;
    }
    if let Some(p) = run.periods {
        cfg.set_periods(p);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_agent(path: &Path) -> Result<SacAgent> {
    SacAgent::from_checkpoint(&Checkpoint::load(path)?)
}

/// Loads the agent when a path is given, otherwise trains one and writes
/// its curve to `curve_path`.
fn obtain_agent(
    cfg: &SimConfig,
    catalog: &ServiceCatalog,
    load: Option<&Path>,
    save: Option<&Path>,
    curve_path: &Path,
) -> Result<SacAgent> {
    if let Some(path) = load {
        return load_agent(path);
    }
    let agent = train_with_curve(cfg, catalog, curve_path)?;
    if let Some(path) = save {
        agent.to_checkpoint().save(path)?;
    }
    Ok(agent)
}

fn train_with_curve(cfg: &SimConfig, catalog: &ServiceCatalog, curve_path: &Path) -> Result<SacAgent> {
    let file = File::create(curve_path).map_err(|e| Error::io(curve_path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    let mut io_err: Option<std::io::Error> = None;
    let (agent, _) = train_agent(cfg, catalog, cfg.seed, |log: &EpisodeLog| {
        if io_err.is_some() {
            return;
        }
        let res = writer.serialize(log).map_err(std::io::Error::other).and_then(|_| writer.flush());
        if let Err(e) = res {
            io_err = Some(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(Error::io(curve_path, e));
    }
    Ok(agent)
}

fn dump_caches(dir: &Path, caches: &[CacheState], outputs: &mut Vec<PathBuf>) -> Result<()> {
    create_dir(dir)?;
    for (t, cache) in caches.iter().enumerate() {
        let path = dir.join(format!("period_{t:05}.csv"));
        cache.write_csv(&path)?;
        outputs.push(path);
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<RunManifest> {
    let started = unix_now();
    let manifest = args.manifest.as_deref().map(RunManifest::load).transpose()?;
    let mut cfg = resolve(manifest.as_ref().map(|m| m.config.clone()), &args.run, args.services)?;
    if let Some(p) = args.policy {
        cfg.policy = p;
    }
    let load = args
        .load_agent
        .clone()
        .or_else(|| manifest.as_ref().and_then(|m| m.agent.clone()));
    let out = &args.run.out;
    create_dir(out)?;
    let catalog = cfg.catalog()?;
    let mut outputs = Vec::new();

    let agent = match cfg.policy {
        PolicyKind::Sac => {
            let curve = out.join("training.csv");
            let agent = obtain_agent(&cfg, &catalog, load.as_deref(), args.save_agent.as_deref(), &curve)?;
            if load.is_none() {
                outputs.push(curve);
            }
            Some(agent)
        }
        _ => None,
    };
    let mut policy = build_policy(&cfg, cfg.policy, agent)?;
    let ext = match args.format {
        Format::Csv => "csv",
        Format::JsonLines => "jsonl",
    };
    for episode in 0..cfg.episodes {
        let result = run_episode(&cfg, &catalog, policy.as_mut(), cfg.seed, episode as u64, args.dump_cache)?;
        let name = if cfg.episodes == 1 {
            format!("metrics.{ext}")
        } else {
            format!("metrics_ep{episode}.{ext}")
        };
        let path = out.join(name);
        write_metrics(&result.rows, &path, args.format)?;
        outputs.push(path);
        if args.dump_cache {
            dump_caches(&out.join(format!("cache_ep{episode}")), &result.caches, &mut outputs)?;
        }
    }
    let manifest = RunManifest {
        command: "simulate".into(),
        policy: cfg.policy.name().into(),
        seed: cfg.seed,
        build: BUILD_TAG.into(),
        started_unix: started,
        finished_unix: unix_now(),
        agent: load.or_else(|| args.save_agent.clone()),
        outputs,
        config: cfg,
    };
    manifest.save(&out.join("manifest.toml"))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub seed: u64,
    pub mean_qoe: f64,
    pub mean_hit_req: f64,
    pub mean_hit_qoe: f64,
}

pub fn compare(args: &CompareArgs) -> Result<Vec<SummaryRow>> {
    let started = unix_now();
    let cfg = resolve(None, &args.run, args.services)?;
    let out = &args.run.out;
    create_dir(out)?;
    let catalog = cfg.catalog()?;
    let mut outputs = Vec::new();
    let mut summary = Vec::new();
    for &kind in &args.policies {
        let agent = match kind {
            PolicyKind::Sac => {
                let curve = out.join("training.csv");
                let agent = obtain_agent(
                    &cfg,
                    &catalog,
                    args.load_agent.as_deref(),
                    args.save_agent.as_deref(),
                    &curve,
                )?;
                if args.load_agent.is_none() {
                    outputs.push(curve);
                }
                Some(agent)
            }
            _ => None,
        };
        let mut policy = build_policy(&cfg, kind, agent)?;
        let mut rows: Vec<MetricsRow> = Vec::new();
        for &seed in &args.seeds.0 {
            let mut run = cfg.clone();
            run.seed = seed;
            let res = run_episode(&run, &catalog, policy.as_mut(), seed, 0, false)?;
            summary.push(SummaryRow {
                policy: kind.name().into(),
                seed,
                mean_qoe: res.mean_qoe(),
                mean_hit_req: res.mean_hit_req(),
                mean_hit_qoe: res.mean_hit_qoe(),
            });
            rows.extend(res.rows);
        }
        let path = out.join(format!("{}.csv", kind.name()));
        write_metrics(&rows, &path, Format::Csv)?;
        outputs.push(path);
    }
    let path = out.join("summary.csv");
    write_csv(&summary, &path, None)?;
    outputs.push(path);
    let manifest = RunManifest {
        command: "compare".into(),
        policy: args.policies.iter().map(|p| p.name()).collect::<Vec<_>>().join(","),
        seed: cfg.seed,
        build: BUILD_TAG.into(),
        started_unix: started,
        finished_unix: unix_now(),
        agent: args.load_agent.clone().or_else(|| args.save_agent.clone()),
        outputs,
        config: cfg,
    };
    manifest.save(&out.join("manifest.toml"))?;
    Ok(summary)
}

pub fn train(args: &TrainArgs) -> Result<PathBuf> {
    let started = unix_now();
    let mut cfg = resolve(None, &args.run, args.services)?;
    // `--episodes` counts training episodes here
    if let Some(n) = args.run.episodes {
        cfg.train_episodes = n;
        cfg.episodes = 1;
    }
    cfg.policy = PolicyKind::Sac;
    let out = &args.run.out;
    create_dir(out)?;
    let catalog = cfg.catalog()?;
    let curve = out.join("training.csv");
    let agent = train_with_curve(&cfg, &catalog, &curve)?;
    let path = args.save_agent.clone().unwrap_or_else(|| out.join("agent.ckpt"));
    agent.to_checkpoint().save(&path)?;
    let manifest = RunManifest {
        command: "train".into(),
        policy: "sac".into(),
        seed: cfg.seed,
        build: BUILD_TAG.into(),
        started_unix: started,
        finished_unix: unix_now(),
        agent: Some(path.clone()),
        outputs: vec![curve, path.clone()],
        config: cfg,
    };
    manifest.save(&out.join("manifest.toml"))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub policy: String,
    pub services: usize,
    pub aps: usize,
    pub calls: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
}

const BENCH_WARMUP: usize = 10;

/// Median wall-clock time of `calls` placement decisions, taken along a
/// running journey after a short warm-up.
pub fn time_decisions(cfg: &SimConfig, kind: PolicyKind, calls: usize) -> Result<Vec<f64>> {
    use rand::SeedableRng;
    let catalog = cfg.catalog()?;
    let agent = match kind {
        PolicyKind::Sac => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            let dims = crate::sac::state_dim(cfg.aps, cfg.services);
            Some(SacAgent::new(dims, cfg.aps * cfg.services, &cfg.sac(), &mut rng))
        }
        _ => None,
    };
    let mut policy = build_policy(cfg, kind, agent)?;
    let mut world = World::new(cfg, &catalog, cfg.seed, 0)?;
    let mut times = Vec::with_capacity(calls);
    for i in 0..BENCH_WARMUP + calls {
        let start = Instant::now();
        let placement = policy.place(&world.observation())?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        if i >= BENCH_WARMUP {
            times.push(ms);
        }
        world.step(&placement, ms)?;
    }
    Ok(times)
}

pub fn bench(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    let started = unix_now();
    let base = resolve(None, &args.run, None)?;
    let out = &args.run.out;
    create_dir(out)?;
    let mut rows = Vec::new();
    for &services in &args.services {
        let mut cfg = base.clone();
        cfg.services = services;
        // long enough that the window never runs out during timing
        cfg.set_periods(BENCH_WARMUP + args.calls);
        cfg.validate()?;
        for &kind in &args.policy {
            let mut times = time_decisions(&cfg, kind, args.calls)?;
            let mean = mean_and_se(&times).0;
            rows.push(BenchRow {
                policy: kind.name().into(),
                services,
                aps: cfg.aps,
                calls: args.calls,
                median_ms: median(&mut times),
                mean_ms: mean,
            });
        }
    }
    let path = out.join("bench.csv");
    write_csv(&rows, &path, None)?;
    let manifest = RunManifest {
        command: "bench".into(),
        policy: args.policy.iter().map(|p| p.name()).collect::<Vec<_>>().join(","),
        seed: base.seed,
        build: BUILD_TAG.into(),
        started_unix: started,
        finished_unix: unix_now(),
        agent: None,
        outputs: vec![path],
        config: base,
    };
    manifest.save(&out.join("manifest.toml"))?;
    Ok(rows)
}

/// Parses `argv` and runs the chosen command. Returns the process exit code.
pub fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Simulate(args) => {
            let m = simulate(&args)?;
            println!("wrote {} files to {}", m.outputs.len() + 1, args.run.out.display());
        }
        Command::Compare(args) => {
            let summary = compare(&args)?;
            for kind in &args.policies {
                let v: Vec<f64> = summary
                    .iter()
                    .filter(|r| r.policy == kind.name())
                    .map(|r| r.mean_qoe)
                    .collect();
                let (m, se) = mean_and_se(&v);
                println!("{:6} mean QoE {m:.4} (se {se:.4}, {} seeds)", kind.name(), v.len());
            }
        }
        Command::Train(args) => {
            let path = train(&args)?;
            println!("saved agent to {}", path.display());
        }
        Command::Bench(args) => {
            let rows = bench(&args)?;
            println!("policy services median_ms");
            for r in rows {
                println!("{:6} {:8} {:.4}", r.policy, r.services, r.median_ms);
            }
        }
        Command::Selftest(args) => {
            let checks = crate::selftest::run_all(args.seed);
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                anyhow::bail!("{failed} self-checks failed");
            }
        }
    }
    Ok(0)
}

/// Exit code for an error raised while running a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.downcast_ref::<Error>().map_or(1, Error::exit_code)
}
