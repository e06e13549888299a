//! The `lmapf-cm` command line: `run`, `sweep`, `validate`, `heatmap`.
//!
//! Exit codes: 0 ok, 1 validation failure, 2 usage or I/O error,
//! 3 watchdog abort.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::artifacts;
use crate::bench::{self, Axis, BaseSpec, BenchError, DistChoice, Inputs, Point, PolicyChoice, SweepSpec};
use crate::grid::GridMap;
use crate::planner::PlannerKind;
use crate::sim::{self, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_WATCHDOG: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "lmapf-cm",
    version,
    about = "Lifelong MAPF with cache grids: runs, sweeps, trace checks and heatmaps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation and write its artifacts.
    Run(RunArgs),
    /// Run the cross product of several parameter lists.
    Sweep(SweepArgs),
    /// Check a trace for collisions and lock-protocol violations.
    Validate(ValidateArgs),
    /// Render a wait heatmap from a metrics file or a trace.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum PlannerArg {
    Pibt,
    Greedy,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Warehouse map file.
    #[arg(long)]
    map: PathBuf,
    /// Shelf kinds CSV (`row,col,kind`); default is a seeded layout.
    #[arg(long)]
    kinds: Option<PathBuf>,
    /// Scenario JSON with per-port groups.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pibt")]
    planner: PlannerArg,
    /// Items per cache slot; defaults to P - 1.
    #[arg(long)]
    capacity: Option<u32>,
    /// Items an agent can carry.
    #[arg(long = "P", default_value_t = sim::DEFAULT_CARRY_CAPACITY)]
    carry: u32,
    /// Tasks to complete.
    #[arg(long, default_value_t = sim::DEFAULT_TASK_LIMIT)]
    tasks: u64,
    /// Ticks without a completion before aborting.
    #[arg(long, default_value_t = sim::DEFAULT_WATCHDOG)]
    watchdog: u64,
    /// MK window length.
    #[arg(long = "mk-m", default_value_t = 100)]
    mk_m: usize,
    /// MK distinct kinds per window.
    #[arg(long = "mk-k", default_value_t = 4)]
    mk_k: usize,
    /// Request frequency table (`item_kind,weight`).
    #[arg(long = "rdd-table")]
    rdd_table: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl CommonArgs {
    fn base(&self) -> BaseSpec {
        BaseSpec {
            map: self.map.clone(),
            kinds: self.kinds.clone(),
            scenario: self.scenario.clone(),
            planner: match self.planner {
                PlannerArg::Pibt => PlannerKind::Pibt,
                PlannerArg::Greedy => PlannerKind::Greedy,
            },
            carry_capacity: self.carry,
            cache_capacity: self.capacity,
            tasks: self.tasks,
            watchdog: self.watchdog,
            mk_m: self.mk_m,
            mk_k: self.mk_k,
            rdd_table: self.rdd_table.clone(),
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Total agents, split across groups; default 8 without a scenario.
    #[arg(long)]
    agents: Option<usize>,
    /// Caches to keep, nearest columns first; default all.
    #[arg(long)]
    caches: Option<usize>,
    #[arg(long, value_enum, default_value = "lru")]
    policy: PolicyChoice,
    #[arg(long, value_enum, default_value = "zhang")]
    dist: DistChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write trace.csv.
    #[arg(long)]
    trace: bool,
    /// Wall-clock budget in seconds.
    #[arg(long = "time-budget")]
    time_budget: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    agents: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    caches: Vec<usize>,
    #[arg(long = "policy", value_enum, value_delimiter = ',', default_value = "lru")]
    policies: Vec<PolicyChoice>,
    #[arg(long = "dist", value_enum, value_delimiter = ',', default_value = "zhang")]
    dists: Vec<DistChoice>,
    /// Seeds as a list and/or ranges, e.g. `0..10,42`.
    #[arg(long = "seed", value_delimiter = ',', default_value = "0", value_parser = parse_seed_token)]
    seeds: Vec<SeedToken>,
    /// Worker threads; default is host parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Axes the aggregate groups by; default every axis but the seed.
    #[arg(long = "group-by", value_enum, value_delimiter = ',')]
    group_by: Vec<Axis>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    map: PathBuf,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    /// Metrics JSON with wait counts.
    #[arg(long, conflicts_with = "trace", required_unless_present = "trace")]
    metrics: Option<PathBuf>,
    /// Trace CSV; needs --map for the grid size.
    #[arg(long, requires = "map")]
    trace: Option<PathBuf>,
    /// Map used to shade obstacles.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Output path stem; `.pgm` and `.csv` are written.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone)]
struct SeedToken(Vec<u64>);

fn parse_seed_token(s: &str) -> Result<SeedToken, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}"));
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a >= b {
                return Err(format!("empty seed range {s}"));
            }
            Ok(SeedToken((a..b).collect()))
        }
        None => Ok(SeedToken(vec![num(s)?])),
    }
}

/// Runs the command line and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Validate(a) => cmd_validate(&a.trace, &a.map),
        Command::Heatmap(a) => cmd_heatmap(&a),
    }
}

fn fail(e: impl std::fmt::Display) -> i32 {
    eprintln!("error: {e}");
    EXIT_USAGE
}

fn create_dir(dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(|source| BenchError::Io { path: dir.display().to_string(), source })
}

fn cmd_run(a: &RunArgs) -> i32 {
    let inputs = match Inputs::load(&a.common.base()) {
        Ok(i) => i,
        Err(e) => return fail(e),
    };
    let point = Point { agents: a.agents, caches: a.caches, policy: a.policy, dist: a.dist, seed: a.seed };
    let mut config = match inputs.config(&point) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    config.record_trace = a.trace;
    config.time_budget = a.time_budget.map(std::time::Duration::from_secs_f64);
    let out = &a.common.out;
    if let Err(e) = create_dir(out) {
        return fail(e);
    }
    let metrics = match sim::run(&config) {
        Ok(m) => m,
        Err(e @ SimError::Watchdog { .. }) => {
            eprintln!("{e}");
            return EXIT_WATCHDOG;
        }
        Err(e) => return fail(e),
    };
    let saved = artifacts::save_metrics(&metrics, &out.join("metrics.json"))
        .and_then(|_| artifacts::save_heatmap(&metrics.wait_counts, Some(&config.map), &out.join("heatmap")))
        .and_then(|_| if a.trace { artifacts::save_trace(&metrics.trace, &out.join("trace.csv")) } else { Ok(()) });
    if let Err(e) = saved {
        return fail(e);
    }
    println!(
        "completed={} makespan={} throughput={:.6} hit_rate={:.6} hits={} misses={}",
        metrics.completed, metrics.makespan, metrics.throughput, metrics.hit_rate, metrics.hits, metrics.misses
    );
    EXIT_OK
}

fn cmd_sweep(a: &SweepArgs) -> i32 {
    let group_by = if a.group_by.is_empty() {
        vec![Axis::Agents, Axis::Caches, Axis::Policy, Axis::Dist]
    } else {
        a.group_by.clone()
    };
    let spec = SweepSpec {
        base: a.common.base(),
        agents: a.agents.clone(),
        caches: a.caches.clone(),
        policies: a.policies.clone(),
        dists: a.dists.clone(),
        seeds: a.seeds.iter().flat_map(|t| t.0.iter().copied()).collect(),
        out: a.common.out.clone(),
        jobs: a.jobs,
        group_by,
    };
    match bench::run_sweep(&spec) {
        Ok(rows) => {
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            for r in rows.iter().filter(|r| r.status != "ok") {
                eprintln!("{}: {} {}", r.point.slug(), r.status, r.message);
            }
            println!("points={} ok={} failed={} out={}", rows.len(), rows.len() - failed, failed, spec.out.display());
            EXIT_OK
        }
        Err(e) => fail(e),
    }
}

fn load_map(path: &Path) -> Result<GridMap, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    GridMap::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_validate(trace: &Path, map: &Path) -> i32 {
    let map = match load_map(map) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let rows = match artifacts::load_trace(trace) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    if rows.is_empty() {
        return fail(format!("{}: trace has no rows", trace.display()));
    }
    match sim::validate_trace(&rows, &map) {
        Ok(()) => {
            println!("ok: {} rows", rows.len());
            EXIT_OK
        }
        Err(violations) => {
            let mut out = std::io::stdout().lock();
            for v in &violations {
                let _ = writeln!(out, "{v}");
            }
            let _ = writeln!(out, "{} violation(s)", violations.len());
            EXIT_INVALID
        }
    }
}

fn cmd_heatmap(a: &HeatmapArgs) -> i32 {
    let map = match a.map.as_deref().map(load_map).transpose() {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let counts = match (&a.metrics, &a.trace, &map) {
        (Some(path), _, _) => artifacts::load_metrics(path).map(|m| m.wait_counts),
        (None, Some(path), Some(map)) => {
            artifacts::load_trace(path).and_then(|t| artifacts::wait_counts_from_trace(&t, map.width(), map.height()))
        }
        _ => return fail("heatmap needs --metrics, or --trace with --map"),
    };
    let counts = match counts {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(m) = &map {
        if counts.len() != m.height() || counts.iter().any(|r| r.len() != m.width()) {
            return fail("wait counts do not match the map size");
        }
    }
    match artifacts::save_heatmap(&counts, map.as_ref(), &a.out) {
        Ok(()) => {
            println!("wrote {}", a.out.with_extension("pgm").display());
            EXIT_OK
        }
        Err(e) => fail(e),
    }
}
