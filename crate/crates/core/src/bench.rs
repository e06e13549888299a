//! Scenario files, run configuration from flags, and parameter sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::{self, ArtifactError};
use crate::cache::EvictionPolicy;
use crate::grid::{Coord, GridMap, MapError};
use crate::planner::PlannerKind;
use crate::sim::{self, AgentPlacement, GroupConfig, SimConfig, SimError, SimMetrics};
use crate::taskgen::{DistributionKind, FrequencyTable, TaskGenError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Map { path: String, source: MapError },
    #[error("{0}")]
    Scenario(String),
    #[error(transparent)]
    TaskGen(#[from] TaskGenError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

fn read(path: &Path) -> Result<String, BenchError> {
    fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.display().to_string(), source })
}

/// One group of a scenario file; `agents` and `starts` are alternatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGroup {
    pub port: [usize; 2],
    #[serde(default)]
    pub caches: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<Vec<[usize; 2]>>,
}

/// Group layout of a map, e.g.
/// `{"groups":[{"port":[3,0],"caches":[[2,2]],"agents":16}],"single_port":false}`.
///
/// With `single_port` every group is merged into one at the first port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub groups: Vec<ScenarioGroup>,
    #[serde(default)]
    pub single_port: bool,
}

fn coord([r, c]: [usize; 2]) -> Coord {
    Coord::new(r, c)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| BenchError::Scenario(format!("scenario: {e}")))?;
        if s.groups.is_empty() {
            return Err(BenchError::Scenario("scenario has no groups".into()));
        }
        for (i, g) in s.groups.iter().enumerate() {
            if g.agents.is_some() && g.starts.is_some() {
                return Err(BenchError::Scenario(format!("group {i} sets both agents and starts")));
            }
        }
        Ok(s)
    }

    /// Single group at the map's first port holding every cache.
    pub fn default_for(map: &GridMap) -> Result<Self, BenchError> {
        let port = *map.port_locs().first().ok_or_else(|| BenchError::Scenario("map has no port".into()))?;
        Ok(Self {
            groups: vec![ScenarioGroup {
                port: [port.row, port.col],
                caches: map.cache_locs().iter().map(|c| [c.row, c.col]).collect(),
                agents: None,
                starts: None,
            }],
            single_port: true,
        })
    }

    /// Group configs against `map`; caches missing from the map are dropped
    /// and `agents` (if given) is split evenly, earlier groups first.
    pub fn groups_for(&self, map: &GridMap, agents: Option<usize>, dist: &DistributionKind) -> Vec<GroupConfig> {
        let mut groups = self.groups.clone();
        if self.single_port && groups.len() > 1 {
            let mut merged = groups[0].clone();
            for g in &groups[1..] {
                merged.caches.extend(&g.caches);
                merged.agents = Some(merged.agents.unwrap_or(0) + g.agents.unwrap_or(0));
            }
            groups = vec![merged];
        }
        let n = groups.len();
        groups
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let placement = match (agents, &g.starts) {
                    (Some(total), _) => AgentPlacement::Count(total / n + usize::from(i < total % n)),
                    (None, Some(starts)) => AgentPlacement::Starts(starts.iter().copied().map(coord).collect()),
                    (None, None) => AgentPlacement::Count(g.agents.unwrap_or(0)),
                };
                GroupConfig {
                    port: coord(g.port),
                    caches: g
                        .caches
                        .iter()
                        .copied()
                        .map(coord)
                        .filter(|&c| map.in_bounds(c) && map.cache_id_at(c).is_some())
                        .collect(),
                    agents: placement,
                    distribution: dist.clone(),
                }
            })
            .collect()
    }
}

/// Replacement policy choice including the cache-less baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyChoice {
    Lru,
    Fifo,
    Random,
    None,
}

impl PolicyChoice {
    pub fn policy(self) -> Option<EvictionPolicy> {
        match self {
            PolicyChoice::Lru => Some(EvictionPolicy::Lru),
            PolicyChoice::Fifo => Some(EvictionPolicy::Fifo),
            PolicyChoice::Random => Some(EvictionPolicy::Random),
            PolicyChoice::None => None,
        }
    }
}

impl fmt::Display for PolicyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyChoice::Lru => "lru",
            PolicyChoice::Fifo => "fifo",
            PolicyChoice::Random => "random",
            PolicyChoice::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DistChoice {
    Mk,
    Zhang,
    Rdd,
}

impl fmt::Display for DistChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistChoice::Mk => "mk",
            DistChoice::Zhang => "zhang",
            DistChoice::Rdd => "rdd",
        })
    }
}

/// Everything about a run that is not swept.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSpec {
    pub map: PathBuf,
    pub kinds: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub planner: PlannerKind,
    pub carry_capacity: u32,
    pub cache_capacity: Option<u32>,
    pub tasks: u64,
    pub watchdog: u64,
    pub mk_m: usize,
    pub mk_k: usize,
    pub rdd_table: Option<PathBuf>,
}

impl BaseSpec {
    pub fn new(map: impl Into<PathBuf>) -> Self {
        Self {
            map: map.into(),
            kinds: None,
            scenario: None,
            planner: PlannerKind::Pibt,
            carry_capacity: sim::DEFAULT_CARRY_CAPACITY,
            cache_capacity: None,
            tasks: sim::DEFAULT_TASK_LIMIT,
            watchdog: sim::DEFAULT_WATCHDOG,
            mk_m: 100,
            mk_k: 4,
            rdd_table: None,
        }
    }
}

/// Coordinates of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Point {
    /// `None` keeps the scenario's agent counts.
    pub agents: Option<usize>,
    /// `None` keeps every cache of the map.
    pub caches: Option<usize>,
    pub policy: PolicyChoice,
    pub dist: DistChoice,
    pub seed: u64,
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "all".to_string(), |n| n.to_string())
}

impl Point {
    /// Directory name unique to this point.
    pub fn slug(&self) -> String {
        format!("a{}-c{}-{}-{}-s{}", opt(self.agents), opt(self.caches), self.policy, self.dist, self.seed)
    }

    fn axis(&self, axis: Axis) -> String {
        match axis {
            Axis::Agents => opt(self.agents),
            Axis::Caches => opt(self.caches),
            Axis::Policy => self.policy.to_string(),
            Axis::Dist => self.dist.to_string(),
            Axis::Seed => self.seed.to_string(),
        }
    }
}

/// Files shared by every point: the raw map, scenario and RDD table.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub base: BaseSpec,
    map: GridMap,
    kinds_csv: Option<String>,
    scenario: Option<Scenario>,
    rdd: Option<FrequencyTable>,
}

impl Inputs {
    pub fn load(base: &BaseSpec) -> Result<Self, BenchError> {
        let map_path = base.map.display().to_string();
        let map = GridMap::parse(&read(&base.map)?).map_err(|source| BenchError::Map { path: map_path, source })?;
        let kinds_csv = base.kinds.as_deref().map(read).transpose()?;
        let scenario = base.scenario.as_deref().map(|p| read(p).and_then(|t| Scenario::from_json(&t))).transpose()?;
        let rdd =
            base.rdd_table.as_deref().map(|p| read(p).and_then(|t| Ok(FrequencyTable::from_csv(&t)?))).transpose()?;
        Ok(Self { base: base.clone(), map, kinds_csv, scenario, rdd })
    }

    /// The map with item kinds laid out (from the kinds file or seeded).
    pub fn map_for(&self, seed: u64, caches: Option<usize>) -> Result<GridMap, BenchError> {
        let wrap = |source| BenchError::Map { path: self.base.map.display().to_string(), source };
        let mut map = match &self.kinds_csv {
            Some(csv) => self.map.apply_kinds_csv(csv).map_err(wrap)?,
            None => self.map.assign_item_kinds(seed),
        };
        if let Some(keep) = caches {
            map = map.remove_caches(keep).map_err(wrap)?;
        }
        Ok(map)
    }

    pub fn distribution(&self, dist: DistChoice) -> Result<DistributionKind, BenchError> {
        Ok(match dist {
            DistChoice::Mk => DistributionKind::Mk { window: self.base.mk_m, kinds_per_window: self.base.mk_k },
            DistChoice::Zhang => DistributionKind::Zhang,
            DistChoice::Rdd => DistributionKind::Rdd {
                table: self.rdd.clone().ok_or_else(|| BenchError::Scenario("--dist rdd needs --rdd-table".into()))?,
            },
        })
    }

    pub fn config(&self, point: &Point) -> Result<SimConfig, BenchError> {
        let map = self.map_for(point.seed, point.caches)?;
        let scenario = match &self.scenario {
            Some(s) => s.clone(),
            None => Scenario::default_for(&map)?,
        };
        let agents = point.agents.or(if self.scenario.is_none() { Some(8) } else { None });
        let groups = scenario.groups_for(&map, agents, &self.distribution(point.dist)?);
        let mut config = SimConfig::new(Arc::new(map), groups);
        config.planner = self.base.planner;
        config.policy = point.policy.policy();
        config.carry_capacity = self.base.carry_capacity;
        config.cache_capacity = self.base.cache_capacity;
        config.task_limit = self.base.tasks;
        config.watchdog = self.base.watchdog;
        config.seed = point.seed;
        config.check_invariants = false;
        config.validate()?;
        Ok(config)
    }
}

/// Sweep axes usable for grouping the aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, clap::ValueEnum)]
pub enum Axis {
    Agents,
    Caches,
    Policy,
    Dist,
    Seed,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Agents => "agents",
            Axis::Caches => "caches",
            Axis::Policy => "policy",
            Axis::Dist => "dist",
            Axis::Seed => "seed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: BaseSpec,
    /// Empty means the scenario's own counts.
    pub agents: Vec<usize>,
    /// Empty means every cache.
    pub caches: Vec<usize>,
    pub policies: Vec<PolicyChoice>,
    pub dists: Vec<DistChoice>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub group_by: Vec<Axis>,
}

impl SweepSpec {
    /// Cross product of every axis in a fixed order.
    pub fn points(&self) -> Vec<Point> {
        let agents: Vec<Option<usize>> =
            if self.agents.is_empty() { vec![None] } else { self.agents.iter().copied().map(Some).collect() };
        let caches: Vec<Option<usize>> =
            if self.caches.is_empty() { vec![None] } else { self.caches.iter().copied().map(Some).collect() };
        let mut out = Vec::new();
        for &a in &agents {
            for &c in &caches {
                for &policy in &self.policies {
                    for &dist in &self.dists {
                        for &seed in &self.seeds {
                            out.push(Point { agents: a, caches: c, policy, dist, seed });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Outcome of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: Point,
    /// `ok`, `watchdog` or `error`.
    pub status: &'static str,
    pub metrics: Option<SimMetrics>,
    pub message: String,
}

pub const ROWS_HEADER: &str =
    "agents,caches,policy,dist,seed,status,completed,makespan,throughput,hits,misses,hit_rate";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        let p = &self.point;
        let head = format!("{},{},{},{},{},{}", opt(p.agents), opt(p.caches), p.policy, p.dist, p.seed, self.status);
        match &self.metrics {
            Some(m) => format!(
                "{head},{},{},{:.6},{},{},{:.6}",
                m.completed, m.makespan, m.throughput, m.hits, m.misses, m.hit_rate
            ),
            None => format!("{head},,,,,,"),
        }
    }
}

/// Runs one point and writes its metrics under `out/points/<slug>/`.
pub fn run_point(inputs: &Inputs, point: &Point, out: &Path) -> SweepRow {
    let result = inputs.config(point).and_then(|c| Ok(sim::run(&c)?));
    match result {
        Ok(metrics) => {
            let dir = out.join("points").join(point.slug());
            let saved = fs::create_dir_all(&dir)
                .map_err(|source| BenchError::Io { path: dir.display().to_string(), source })
                .and_then(|_| Ok(artifacts::save_metrics(&metrics, &dir.join("metrics.json"))?));
            match saved {
                Ok(()) => SweepRow { point: *point, status: "ok", metrics: Some(metrics), message: String::new() },
                Err(e) => SweepRow { point: *point, status: "error", metrics: None, message: e.to_string() },
            }
        }
        Err(BenchError::Sim(SimError::Watchdog { tick, .. })) => {
            SweepRow { point: *point, status: "watchdog", metrics: None, message: format!("watchdog at tick {tick}") }
        }
        Err(e) => SweepRow { point: *point, status: "error", metrics: None, message: e.to_string() },
    }
}

/// Mean throughput and hit rate of successful rows, grouped by `axes`.
pub fn aggregate_csv(rows: &[SweepRow], axes: &[Axis]) -> String {
    let mut groups: BTreeMap<Vec<String>, (usize, usize, f64, f64)> = BTreeMap::new();
    let mut order: Vec<Vec<String>> = Vec::new();
    for row in rows {
        let key: Vec<String> = axes.iter().map(|&a| row.point.axis(a)).collect();
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0, 0, 0.0, 0.0)
        });
        entry.0 += 1;
        if let Some(m) = &row.metrics {
            entry.1 += 1;
            entry.2 += m.throughput;
            entry.3 += m.hit_rate;
        }
    }
    let mut out: String = axes.iter().map(|a| format!("{},", a.name())).collect();
    out.push_str("runs,ok_runs,mean_throughput,mean_hit_rate\n");
    for key in order {
        let (runs, ok, tp, hr) = groups[&key];
        let mean = |x: f64| if ok == 0 { "nan".to_string() } else { format!("{:.6}", x / ok as f64) };
        out.push_str(&format!("{},{runs},{ok},{},{}\n", key.join(","), mean(tp), mean(hr)));
    }
    out
}

/// Runs every point on a bounded pool, then writes `rows.csv` and
/// `aggregate.csv` under `spec.out`.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, BenchError> {
    let inputs = Inputs::load(&spec.base)?;
    fs::create_dir_all(&spec.out).map_err(|source| BenchError::Io { path: spec.out.display().to_string(), source })?;
    let points = spec.points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.unwrap_or(0))
        .build()
        .map_err(|e| BenchError::Scenario(format!("worker pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| points.par_iter().map(|p| run_point(&inputs, p, &spec.out)).collect());

    let mut table = String::from(ROWS_HEADER);
    table.push('\n');
    for r in &rows {
        table.push_str(&r.csv_line());
        table.push('\n');
    }
    let write = |name: &str, text: &str| {
        let path = spec.out.join(name);
        fs::write(&path, text).map_err(|source| BenchError::Io { path: path.display().to_string(), source })
    };
    write("rows.csv", &table)?;
    write("aggregate.csv", &aggregate_csv(&rows, &spec.group_by))?;
    Ok(rows)
}
