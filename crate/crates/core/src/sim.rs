//! Simulation engine: the per-tick plan, move, release, update loop.
//!
//! Within a tick the order is fixed:
//!
//! 1. plan one joint step and execute it, counting moves and waits;
//! 2. release phase: agents that reached a locked cache give the lock back
//!    and settle the slot (withdraw or deposit);
//! 3. update phase: shelf arrivals, then port deliveries with their new
//!    assignments, then lock-free shelf seekers retarget to caches.
//!
//! Groups are visited in ascending order and agents in ascending id, so a run
//! is a pure function of its [`SimConfig`].

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assigner::{AgentState, AgentStatus, AssignError, ItemLedger, TaskAssigner};
use crate::cache::{CacheError, CacheGroup, CacheStats, EvictionPolicy, LockKind};
use crate::grid::{CellKind, Coord, DistanceTable, GridMap, MapError};
use crate::ids::{AgentId, PortId};
use crate::planner::{
    update_priorities, validate_step, Conflict, PlanAgent, PlannerKind, Priority, StepPlanner, StepRequest,
};
use crate::taskgen::{DistributionKind, DistributionSpec, TaskGenError, TaskStream};

pub const DEFAULT_CARRY_CAPACITY: u32 = 100;
pub const DEFAULT_TASK_LIMIT: u64 = 1000;
pub const DEFAULT_WATCHDOG: u64 = 50_000;

const STREAM_STARTS: u64 = 1;
const STREAM_PLANNER: u64 = 2;
const STREAM_TASKS: u64 = 1 << 16;
const STREAM_CACHES: u64 = 2 << 16;

/// Rows of trace kept for a watchdog diagnostic.
const DIAGNOSTIC_ROWS: usize = 64;

/// How the agents of a group are placed at tick 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentPlacement {
    /// Seeded distinct aisle cells.
    Count(usize),
    /// Explicit start cells.
    Starts(Vec<Coord>),
}

impl AgentPlacement {
    pub fn len(&self) -> usize {
        match self {
            AgentPlacement::Count(n) => *n,
            AgentPlacement::Starts(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One port with its own caches, agents and task stream.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupConfig {
    pub port: Coord,
    pub caches: Vec<Coord>,
    pub agents: AgentPlacement,
    pub distribution: DistributionKind,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub map: Arc<GridMap>,
    pub groups: Vec<GroupConfig>,
    pub planner: PlannerKind,
    /// `None` runs plain lifelong MAPF with every cache ignored.
    pub policy: Option<EvictionPolicy>,
    /// Items an agent can carry (P).
    pub carry_capacity: u32,
    /// Items per cache slot; `None` means `carry_capacity - 1`.
    pub cache_capacity: Option<u32>,
    pub task_limit: u64,
    pub seed: u64,
    /// Abort after this many ticks without a completed task.
    pub watchdog: u64,
    pub time_budget: Option<Duration>,
    pub record_trace: bool,
    /// Assert planner, cache and agent invariants every tick.
    pub check_invariants: bool,
}

impl SimConfig {
    /// A config with default limits: P = 100, 1000 tasks, LRU, PIBT.
    pub fn new(map: Arc<GridMap>, groups: Vec<GroupConfig>) -> Self {
        Self {
            map,
            groups,
            planner: PlannerKind::Pibt,
            policy: Some(EvictionPolicy::Lru),
            carry_capacity: DEFAULT_CARRY_CAPACITY,
            cache_capacity: None,
            task_limit: DEFAULT_TASK_LIMIT,
            seed: 0,
            watchdog: DEFAULT_WATCHDOG,
            time_budget: None,
            record_trace: false,
            check_invariants: cfg!(debug_assertions),
        }
    }

    /// A single group at the map's first port using every cache.
    pub fn single_port(map: Arc<GridMap>, agents: usize, distribution: DistributionKind) -> Result<Self, SimError> {
        let port = *map.port_locs().first().ok_or_else(|| SimError::Config("map has no port".into()))?;
        let caches = map.cache_locs().to_vec();
        Ok(Self::new(map, vec![GroupConfig { port, caches, agents: AgentPlacement::Count(agents), distribution }]))
    }

    pub fn effective_cache_capacity(&self) -> u32 {
        self.cache_capacity.unwrap_or(self.carry_capacity.saturating_sub(1))
    }

    pub fn num_agents(&self) -> usize {
        self.groups.iter().map(|g| g.agents.len()).sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.task_limit == 0 {
            return bad("task limit must be at least 1".into());
        }
        if self.groups.is_empty() {
            return bad("no groups".into());
        }
        if self.num_agents() == 0 {
            return bad("no agents".into());
        }
        if self.watchdog == 0 {
            return bad("watchdog horizon must be at least 1".into());
        }
        if self.policy.is_some() {
            if self.carry_capacity < 2 {
                return bad(format!("carry capacity {} leaves no items to cache", self.carry_capacity));
            }
            if self.effective_cache_capacity() == 0 {
                return bad("cache capacity must be at least 1".into());
            }
        } else if self.carry_capacity == 0 {
            return bad("carry capacity must be at least 1".into());
        }
        let mut owner = BTreeMap::new();
        for (g, group) in self.groups.iter().enumerate() {
            if !self.map.in_bounds(group.port) || !matches!(self.map.cell(group.port), CellKind::Port(_)) {
                return bad(format!("group {g}: {} is not a port", group.port));
            }
            for &c in &group.caches {
                if !self.map.in_bounds(c) || self.map.cache_id_at(c).is_none() {
                    return bad(format!("group {g}: {c} is not a cache"));
                }
                if let Some(other) = owner.insert(c, g) {
                    return bad(format!("cache {c} belongs to groups {other} and {g}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    TaskGen(#[from] TaskGenError),
    #[error("watchdog: no task completed in ticks {since}..={tick}\n{diagnostic}")]
    Watchdog { tick: u64, since: u64, diagnostic: String },
    #[error("wall-clock budget exhausted at tick {tick}")]
    TimeBudget { tick: u64 },
    #[error("invariant violated at tick {tick}: {reason}")]
    Invariant { tick: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceAction {
    Start,
    Move,
    Wait,
}

/// One row of the trace: an agent's state after a tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: u64,
    pub agent: u32,
    pub status: AgentStatus,
    pub row: usize,
    pub col: usize,
    pub action: TraceAction,
    /// Lock events of this tick, `;`-separated, e.g. `release_read@3:4`.
    pub lock_event: String,
}

impl TraceEvent {
    pub fn loc(&self) -> Coord {
        Coord::new(self.row, self.col)
    }
}

/// Where every withdrawn shelf item currently is.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFlow {
    pub shelf_withdrawn: u64,
    pub shelf_returned: u64,
    pub delivered: u64,
    pub cached: u64,
    pub in_transit: u64,
}

impl ItemFlow {
    /// Withdrawn items equal delivered + returned + cached + carried.
    pub fn is_conserved(&self) -> bool {
        self.shelf_withdrawn == self.delivered + self.shelf_returned + self.cached + self.in_transit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub completed: u64,
    pub makespan: u64,
    pub throughput: f64,
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
    pub agents: usize,
    pub moves: u64,
    pub waits: u64,
    pub width: usize,
    pub height: usize,
    /// Wait actions per cell, row-major.
    pub wait_counts: Vec<Vec<u64>>,
    /// Agent-ticks spent in each status.
    pub status_ticks: BTreeMap<AgentStatus, u64>,
    pub items: ItemFlow,
    pub cache: CacheStats,
    /// Written to its own CSV file rather than the metrics JSON.
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
}

impl SimMetrics {
    /// Exact checks of the counting identities.
    pub fn check_identities(&self) -> Result<(), String> {
        if self.makespan * self.agents as u64 != self.moves + self.waits {
            return Err(format!(
                "{} ticks x {} agents != {} moves + {} waits",
                self.makespan, self.agents, self.moves, self.waits
            ));
        }
        if self.hits + self.misses != self.completed {
            return Err(format!("{} hits + {} misses != {} completed", self.hits, self.misses, self.completed));
        }
        if self.makespan > 0 && self.throughput != self.completed as f64 / self.makespan as f64 {
            return Err(format!("throughput {} != {}/{}", self.throughput, self.completed, self.makespan));
        }
        let waits: u64 = self.wait_counts.iter().flatten().sum();
        if waits != self.waits {
            return Err(format!("wait grid sums to {waits}, counted {}", self.waits));
        }
        if !self.items.is_conserved() {
            return Err(format!("items not conserved: {:?}", self.items));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// A running simulation; [`Simulation::step`] advances one tick.
pub struct Simulation {
    map: Arc<GridMap>,
    planner: Box<dyn StepPlanner>,
    planner_rng: ChaCha8Rng,
    distances: DistanceTable,
    agents: Vec<AgentState>,
    assigners: Vec<TaskAssigner>,
    task_limit: u64,
    watchdog: u64,
    deadline: Option<Instant>,
    record_trace: bool,
    check: bool,
    tick: u64,
    completed: u64,
    hits: u64,
    misses: u64,
    moves: u64,
    waits: u64,
    wait_counts: Vec<u64>,
    status_ticks: [u64; 6],
    last_completion: u64,
    finished: bool,
    trace: Vec<TraceEvent>,
    recent: std::collections::VecDeque<TraceEvent>,
    lock_labels: Vec<Vec<String>>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Distinct start cells: explicit starts first, then seeded aisle cells.
fn place_agents(config: &SimConfig) -> Result<Vec<Vec<Coord>>, SimError> {
    let map = &config.map;
    let mut taken = std::collections::BTreeSet::new();
    for group in &config.groups {
        if let AgentPlacement::Starts(starts) = &group.agents {
            for &s in starts {
                if !map.in_bounds(s) || !map.is_passable(s) {
                    return Err(SimError::Config(format!("start {s} is not passable")));
                }
                if !taken.insert(s) {
                    return Err(SimError::Config(format!("two agents start at {s}")));
                }
            }
        }
    }
    let free: Vec<Coord> = map.aisle_cells().into_iter().filter(|c| !taken.contains(c)).collect();
    let wanted: usize = config
        .groups
        .iter()
        .filter_map(|g| match g.agents {
            AgentPlacement::Count(n) => Some(n),
            AgentPlacement::Starts(_) => None,
        })
        .sum();
    if wanted > free.len() {
        return Err(SimError::Config(format!("{wanted} agents but only {} free aisle cells", free.len())));
    }
    let mut rng = stream_rng(config.seed, STREAM_STARTS);
    let mut picked = sample(&mut rng, free.len(), wanted).into_iter().map(|i| free[i]);
    Ok(config
        .groups
        .iter()
        .map(|g| match &g.agents {
            AgentPlacement::Count(n) => picked.by_ref().take(*n).collect(),
            AgentPlacement::Starts(s) => s.clone(),
        })
        .collect())
}

impl Simulation {
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let map = Arc::clone(&config.map);
        let caching = config.policy.is_some();
        let capacity = config.effective_cache_capacity().max(1);
        let starts = place_agents(config)?;

        let mut assigners = Vec::with_capacity(config.groups.len());
        for (g, group) in config.groups.iter().enumerate() {
            let port_id = match map.cell(group.port) {
                CellKind::Port(p) => p,
                _ => PortId(g as u32),
            };
            let spec = DistributionSpec {
                kind: group.distribution.clone(),
                kinds: map.num_kinds(),
                seed: stream_rng(config.seed, STREAM_TASKS + g as u64).next_u64(),
                port: port_id,
            };
            let stream = TaskStream::new(&spec)?;
            let cache_seed = stream_rng(config.seed, STREAM_CACHES + g as u64).next_u64();
            let caches = CacheGroup::new(
                g,
                &map,
                &group.caches,
                capacity,
                config.policy.unwrap_or(EvictionPolicy::Lru),
                cache_seed,
            )?;
            assigners.push(TaskAssigner::new(g, group.port, caches, stream, caching, config.carry_capacity));
        }

        let mut agents = Vec::with_capacity(config.num_agents());
        for (g, group_starts) in starts.iter().enumerate() {
            for &s in group_starts {
                agents.push(AgentState::new(AgentId(agents.len() as u32), g, s));
            }
        }

        let mut sim = Self {
            distances: DistanceTable::new(&map),
            planner: config.planner.build(),
            planner_rng: stream_rng(config.seed, STREAM_PLANNER),
            wait_counts: vec![0; map.num_cells()],
            lock_labels: vec![Vec::new(); agents.len()],
            map,
            agents,
            assigners,
            task_limit: config.task_limit,
            watchdog: config.watchdog,
            deadline: config.time_budget.map(|b| Instant::now() + b),
            record_trace: config.record_trace,
            check: config.check_invariants,
            tick: 0,
            completed: 0,
            hits: 0,
            misses: 0,
            moves: 0,
            waits: 0,
            status_ticks: [0; 6],
            last_completion: 0,
            finished: false,
            trace: Vec::new(),
            recent: std::collections::VecDeque::new(),
        };

        for i in 0..sim.agents.len() {
            let g = sim.agents[i].group;
            let task = sim.assigners[g].draw_task();
            sim.assigners[g].initial_assign(&mut sim.agents[i], task, &sim.map, 0)?;
            sim.collect_lock_events(g);
        }
        sim.emit_rows(TraceAction::Start, &[]);
        if sim.check {
            sim.check_state()?;
        }
        Ok(sim)
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn assigners(&self) -> &[TaskAssigner] {
        &self.assigners
    }

    pub fn wait_count_at(&self, at: Coord) -> u64 {
        self.wait_counts[self.map.index_of(at)]
    }

    fn collect_lock_events(&mut self, group: usize) {
        for e in self.assigners[group].drain_events() {
            self.lock_labels[e.agent.index()].push(e.label());
        }
    }

    fn emit_rows(&mut self, action: TraceAction, moved: &[bool]) {
        for (i, a) in self.agents.iter().enumerate() {
            let action = match action {
                TraceAction::Start => TraceAction::Start,
                _ if moved[i] => TraceAction::Move,
                _ => TraceAction::Wait,
            };
            let row = TraceEvent {
                tick: self.tick,
                agent: a.id.0,
                status: a.status,
                row: a.loc.row,
                col: a.loc.col,
                action,
                lock_event: self.lock_labels[i].join(";"),
            };
            self.lock_labels[i].clear();
            if self.recent.len() == DIAGNOSTIC_ROWS {
                self.recent.pop_front();
            }
            self.recent.push_back(row.clone());
            if self.record_trace {
                self.trace.push(row);
            }
        }
    }

    /// Advances one tick. Returns `true` once the task limit is reached.
    pub fn step(&mut self) -> Result<bool, SimError> {
        if self.finished {
            return Ok(true);
        }
        self.tick += 1;
        let now = self.tick;

        for a in &self.agents {
            self.distances.ensure(&self.map, a.target)?;
        }
        let plan_agents: Vec<PlanAgent> = self
            .agents
            .iter()
            .map(|a| PlanAgent { id: a.id, current: a.loc, target: a.target, priority: a.priority })
            .collect();
        let req = StepRequest {
            map: &self.map,
            distances: &self.distances,
            agents: &plan_agents,
            seed: self.planner_rng.next_u64(),
        };
        let plan = self.planner.plan_step(&req);
        if self.check {
            let before: Vec<Coord> = plan_agents.iter().map(|a| a.current).collect();
            if let Err(conflicts) = validate_step(&self.map, &before, &plan.moves) {
                let reason = conflicts.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
                return Err(SimError::Invariant { tick: now, reason });
            }
        }

        let mut moved = vec![false; self.agents.len()];
        for (i, (a, &next)) in self.agents.iter_mut().zip(&plan.moves).enumerate() {
            self.status_ticks[a.status.index()] += 1;
            if next == a.loc {
                self.waits += 1;
                self.wait_counts[self.map.index_of(next)] += 1;
            } else {
                self.moves += 1;
                moved[i] = true;
                a.loc = next;
            }
        }

        let arrived: Vec<bool> = self.agents.iter().map(|a| a.loc == a.target).collect();

        // Release phase.
        for i in arrived.iter().enumerate().filter_map(|(i, &hit)| hit.then_some(i)) {
            if self.agents[i].status.targets_cache() {
                let g = self.agents[i].group;
                self.assigners[g].on_arrival(&mut self.agents[i], &self.map, now)?;
                self.collect_lock_events(g);
            }
        }

        // Update phase.
        self.update_phase(&arrived, now)?;

        if !self.finished {
            let mut priorities: Vec<Priority> = self.agents.iter().map(|a| a.priority).collect();
            update_priorities(&mut priorities, &arrived);
            for (a, p) in self.agents.iter_mut().zip(priorities) {
                a.priority = p;
            }
        }
        self.emit_rows(TraceAction::Move, &moved);

        if self.check {
            self.check_state()?;
        }
        if self.finished {
            return Ok(true);
        }
        if now - self.last_completion >= self.watchdog {
            return Err(SimError::Watchdog {
                tick: now,
                since: self.last_completion + 1,
                diagnostic: self.diagnostic(),
            });
        }
        if self.deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(SimError::TimeBudget { tick: now });
        }
        Ok(false)
    }

    fn update_phase(&mut self, arrived: &[bool], now: u64) -> Result<(), SimError> {
        for i in arrived.iter().enumerate().filter_map(|(i, &hit)| hit.then_some(i)) {
            let s = self.agents[i].status;
            if matches!(s, AgentStatus::SfGet | AgentStatus::SfAdd) && self.agents[i].loc == self.agents[i].target {
                let g = self.agents[i].group;
                self.assigners[g].on_arrival(&mut self.agents[i], &self.map, now)?;
                self.collect_lock_events(g);
            }
        }
        for i in arrived.iter().enumerate().filter_map(|(i, &hit)| hit.then_some(i)) {
            let a = &self.agents[i];
            if !(a.status == AgentStatus::UpEnd && a.loc == a.target) {
                continue;
            }
            let g = a.group;
            if a.loc != self.assigners[g].port() {
                continue;
            }
            let task = self.assigners[g].draw_task();
            let delivery = self.assigners[g].on_up_end_arrival(&mut self.agents[i], task, &self.map, now)?;
            self.collect_lock_events(g);
            self.completed += 1;
            self.last_completion = now;
            if delivery.hit {
                self.hits += 1;
            } else {
                self.misses += 1;
            }
            if self.completed == self.task_limit {
                self.finished = true;
                return Ok(());
            }
        }
        for i in 0..self.agents.len() {
            let g = self.agents[i].group;
            if self.assigners[g].per_update_retarget(&mut self.agents[i], now)?.is_some() {
                self.collect_lock_events(g);
            }
        }
        Ok(())
    }

    fn diagnostic(&self) -> String {
        let mut out = String::from("agents:\n");
        for a in &self.agents {
            out.push_str(&format!(
                "  {} {} at {} -> {} carrying {:?} lock {:?} age {}\n",
                a.id, a.status, a.loc, a.target, a.carrying, a.held_lock, a.priority.age
            ));
        }
        out.push_str("recent trace:\n");
        for r in &self.recent {
            out.push_str(&format!(
                "  {},{},{},{},{},{:?},{}\n",
                r.tick, r.agent, r.status, r.row, r.col, r.action, r.lock_event
            ));
        }
        out
    }

    /// Current item distribution across shelves, caches, agents and ports.
    pub fn item_flow(&self) -> ItemFlow {
        let ledger = self.assigners.iter().map(|t| t.ledger()).fold(ItemLedger::default(), |acc, l| ItemLedger {
            shelf_withdrawn: acc.shelf_withdrawn + l.shelf_withdrawn,
            shelf_returned: acc.shelf_returned + l.shelf_returned,
            delivered: acc.delivered + l.delivered,
        });
        ItemFlow {
            shelf_withdrawn: ledger.shelf_withdrawn,
            shelf_returned: ledger.shelf_returned,
            delivered: ledger.delivered,
            cached: self.assigners.iter().map(|t| t.caches().stored_items()).sum(),
            in_transit: self.agents.iter().map(|a| u64::from(a.carried_items())).sum(),
        }
    }

    /// Cache, agent and lock-ownership invariants.
    pub fn check_state(&self) -> Result<(), SimError> {
        let fail = |reason: String| Err(SimError::Invariant { tick: self.tick, reason });
        for t in &self.assigners {
            if let Err(e) = t.check_invariants() {
                return fail(e);
            }
        }
        for a in &self.agents {
            if let Err(e) = a.check_invariants(self.assigners[a.group].carry_capacity()) {
                return fail(e);
            }
            if let Some(held) = a.held_lock {
                let slot = self.assigners[a.group].caches().slot(held.cache)?;
                if slot.holds_lock(a.id) != Some(held.kind) {
                    return fail(format!("agent {} thinks it holds {:?} on {}", a.id, held.kind, held.cache));
                }
            }
        }
        for t in &self.assigners {
            for slot in t.caches().slots() {
                let holders =
                    slot.readers.iter().map(|&r| (r, LockKind::Read)).chain(slot.writer.map(|w| (w, LockKind::Write)));
                for (agent, kind) in holders {
                    let held = self.agents.get(agent.index()).and_then(|a| a.held_lock);
                    if held.map(|h| (h.cache, h.kind)) != Some((slot.cache_id, kind)) {
                        return fail(format!("slot {} lists {agent} as {kind:?} holder", slot.cache_id));
                    }
                }
            }
        }
        let flow = self.item_flow();
        if !flow.is_conserved() {
            return fail(format!("items not conserved: {flow:?}"));
        }
        Ok(())
    }

    /// Snapshot of the metrics so far; consumes the recorded trace.
    pub fn into_metrics(self) -> SimMetrics {
        let (w, h) = (self.map.width(), self.map.height());
        let wait_counts = self.wait_counts.chunks(w).map(<[u64]>::to_vec).collect();
        let cache = self.assigners.iter().map(|t| t.caches().stats()).fold(CacheStats::default(), |a, s| CacheStats {
            read_grants: a.read_grants + s.read_grants,
            read_releases: a.read_releases + s.read_releases,
            write_grants: a.write_grants + s.write_grants,
            write_releases: a.write_releases + s.write_releases,
            withdraw_one: a.withdraw_one + s.withdraw_one,
            withdraw_all_items: a.withdraw_all_items + s.withdraw_all_items,
            deposited_items: a.deposited_items + s.deposited_items,
            evictions: a.evictions + s.evictions,
        });
        let decided = self.hits + self.misses;
        SimMetrics {
            completed: self.completed,
            makespan: self.tick,
            throughput: if self.tick == 0 { 0.0 } else { self.completed as f64 / self.tick as f64 },
            hits: self.hits,
            misses: self.misses,
            hit_rate: if decided == 0 { 0.0 } else { self.hits as f64 / decided as f64 },
            agents: self.agents.len(),
            moves: self.moves,
            waits: self.waits,
            width: w,
            height: h,
            wait_counts,
            status_ticks: AgentStatus::ALL.iter().map(|&s| (s, self.status_ticks[s.index()])).collect(),
            items: self.item_flow(),
            cache,
            trace: self.trace,
        }
    }
}

/// Runs a simulation until `task_limit` tasks are delivered.
pub fn run(config: &SimConfig) -> Result<SimMetrics, SimError> {
    let mut sim = Simulation::new(config)?;
    while !sim.step()? {}
    Ok(sim.into_metrics())
}

/// A problem found while replaying a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceViolation {
    Empty,
    /// Rows must come in tick order, one per agent per tick.
    Layout {
        tick: u64,
        reason: String,
    },
    /// Agents in the conflict are named by id.
    Motion {
        tick: u64,
        conflict: Conflict,
    },
    Lock {
        tick: u64,
        agent: u32,
        reason: String,
    },
}

impl std::fmt::Display for TraceViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TraceViolation::Empty => write!(f, "trace has no rows"),
            TraceViolation::Layout { tick, reason } => write!(f, "tick {tick}: {reason}"),
            TraceViolation::Motion { tick, conflict } => write!(f, "tick {tick}: {conflict}"),
            TraceViolation::Lock { tick, agent, reason } => write!(f, "tick {tick}: agent {agent}: {reason}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LockLabel {
    acquire: bool,
    kind: LockKind,
    at: Coord,
}

fn parse_lock_label(s: &str) -> Option<LockLabel> {
    let (head, at) = s.split_once('@')?;
    let (verb, kind) = head.split_once('_')?;
    let acquire = match verb {
        "acquire" => true,
        "release" => false,
        _ => return None,
    };
    let kind = match kind {
        "read" => LockKind::Read,
        "write" => LockKind::Write,
        _ => return None,
    };
    let (r, c) = at.split_once(':')?;
    Some(LockLabel { acquire, kind, at: Coord::new(r.parse().ok()?, c.parse().ok()?) })
}

/// Replays a trace, checking motion safety and the lock protocol.
///
/// Motion: every agent has one row per tick, on a passable cell, adjacent to
/// (or equal to) its previous cell, with no shared cells and no swaps.
/// Locks: each agent holds at most one lock, a writer excludes everyone
/// else, locks are taken on cache cells and released where they were taken.
pub fn validate_trace(trace: &[TraceEvent], map: &GridMap) -> Result<(), Vec<TraceViolation>> {
    if trace.is_empty() {
        return Err(vec![TraceViolation::Empty]);
    }
    let mut violations = Vec::new();
    let mut ticks: BTreeMap<u64, Vec<&TraceEvent>> = BTreeMap::new();
    for e in trace {
        ticks.entry(e.tick).or_default().push(e);
    }
    let first_tick = *ticks.keys().next().expect("non-empty");
    let mut agents: Vec<u32> = ticks[&first_tick].iter().map(|e| e.agent).collect();
    agents.sort_unstable();
    let mut prev: Option<(u64, Vec<Coord>)> = None;
    let mut held: BTreeMap<u32, LockLabel> = BTreeMap::new();
    let mut readers: BTreeMap<Coord, usize> = BTreeMap::new();
    let mut writers: BTreeMap<Coord, u32> = BTreeMap::new();

    for (&tick, rows) in &ticks {
        let mut rows = rows.clone();
        rows.sort_by_key(|e| e.agent);
        let ids: Vec<u32> = rows.iter().map(|e| e.agent).collect();
        if ids != agents {
            violations.push(TraceViolation::Layout { tick, reason: format!("agents {ids:?}, expected {agents:?}") });
            continue;
        }
        let locs: Vec<Coord> = rows.iter().map(|e| e.loc()).collect();
        let mut in_map = true;
        for e in &rows {
            if !map.in_bounds(e.loc()) || !map.is_passable(e.loc()) {
                in_map = false;
                violations.push(TraceViolation::Layout {
                    tick,
                    reason: format!("agent {} on {}, not a passable cell", e.agent, e.loc()),
                });
            }
        }
        if let Some((pt, before)) = &prev {
            if tick != pt + 1 {
                violations.push(TraceViolation::Layout { tick, reason: format!("tick follows {pt}") });
            }
            if in_map {
                if let Err(conflicts) = validate_step(map, before, &locs) {
                    for c in conflicts {
                        violations
                            .push(TraceViolation::Motion { tick, conflict: c.map_agents(|i| agents[i] as usize) });
                    }
                }
            }
        }

        let mut events: Vec<(u32, Coord, LockLabel)> = Vec::new();
        for e in &rows {
            for label in e.lock_event.split(';').filter(|s| !s.is_empty()) {
                match parse_lock_label(label) {
                    Some(l) => events.push((e.agent, e.loc(), l)),
                    None => violations.push(TraceViolation::Lock {
                        tick,
                        agent: e.agent,
                        reason: format!("bad lock event {label:?}"),
                    }),
                }
            }
        }
        // Releases of a tick happen before its acquisitions.
        events.sort_by_key(|(agent, _, l)| (l.acquire, *agent));
        for (agent, loc, l) in events {
            let mut bad = |reason: String| violations.push(TraceViolation::Lock { tick, agent, reason });
            if l.acquire {
                if map.cache_id_at(l.at).is_none() {
                    bad(format!("lock on non-cache cell {}", l.at));
                    continue;
                }
                if let Some(h) = held.get(&agent) {
                    bad(format!("already holds a lock at {}", h.at));
                    continue;
                }
                if let Some(w) = writers.get(&l.at) {
                    bad(format!("{} is write-locked by agent {w}", l.at));
                    continue;
                }
                match l.kind {
                    LockKind::Write if readers.get(&l.at).copied().unwrap_or(0) > 0 => {
                        bad(format!("write lock on {} while it has readers", l.at));
                        continue;
                    }
                    LockKind::Write => {
                        writers.insert(l.at, agent);
                    }
                    LockKind::Read => *readers.entry(l.at).or_default() += 1,
                }
                held.insert(agent, l);
            } else {
                match held.get(&agent) {
                    Some(h) if h.at == l.at && h.kind == l.kind => {}
                    other => {
                        bad(format!(
                            "releases {:?} at {} while holding {:?}",
                            l.kind,
                            l.at,
                            other.map(|h| (h.kind, h.at))
                        ));
                        continue;
                    }
                }
                if loc != l.at {
                    bad(format!("releases the lock on {} from {loc}", l.at));
                }
                held.remove(&agent);
                match l.kind {
                    LockKind::Write => {
                        writers.remove(&l.at);
                    }
                    LockKind::Read => {
                        if let Some(n) = readers.get_mut(&l.at) {
                            *n -= 1;
                        }
                    }
                }
            }
        }
        prev = Some((tick, locs));
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::DistributionKind;

    fn corridor(len: usize) -> Arc<GridMap> {
        let row = format!("U{}B", ".".repeat(len - 1));
        Arc::new(GridMap::parse(&format!("type warehouse\nheight 1\nwidth {}\nmap\n{row}\n", row.len())).unwrap())
    }

    fn mk1() -> DistributionKind {
        DistributionKind::Mk { window: 10, kinds_per_window: 1 }
    }

    fn shuttle(d: usize, tasks: u64) -> SimConfig {
        let map = corridor(d);
        let group = GroupConfig {
            port: Coord::new(0, 0),
            caches: vec![],
            agents: AgentPlacement::Starts(vec![Coord::new(0, 0)]),
            distribution: mk1(),
        };
        let mut c = SimConfig::new(map, vec![group]);
        c.policy = None;
        c.task_limit = tasks;
        c.record_trace = true;
        c.check_invariants = true;
        c
    }

    #[test]
    fn shuttle_makespan_is_two_d_per_task() {
        for d in [1, 3, 7] {
            let m = run(&shuttle(d, 10)).unwrap();
            assert_eq!(m.makespan, 20 * d as u64, "d = {d}");
            assert_eq!(m.throughput, 1.0 / (2.0 * d as f64));
            assert_eq!((m.hits, m.misses), (0, 10));
        }
    }

    #[test]
    fn one_cache_next_to_port_hits_after_first_fill() {
        // Port, cache, aisle, shelf.
        let map = Arc::new(GridMap::parse("type warehouse\nheight 1\nwidth 4\nmap\nUC.B\n").unwrap());
        let group = GroupConfig {
            port: Coord::new(0, 0),
            caches: vec![Coord::new(0, 1)],
            agents: AgentPlacement::Count(1),
            distribution: mk1(),
        };
        let mut c = SimConfig::new(map, vec![group]);
        c.task_limit = 20;
        c.check_invariants = true;
        let m = run(&c).unwrap();
        assert_eq!((m.hits, m.misses), (19, 1));
        m.check_identities().unwrap();
    }

    #[test]
    fn wait_counts_track_cells() {
        let mut c = shuttle(2, 1);
        c.groups[0].agents = AgentPlacement::Starts(vec![Coord::new(0, 2)]);
        let mut sim = Simulation::new(&c).unwrap();
        // Starting on the shelf: the first action is a wait there.
        sim.step().unwrap();
        assert_eq!(sim.wait_count_at(Coord::new(0, 2)), 1);
        assert_eq!(sim.agents()[0].status, AgentStatus::UpEnd);
    }

    #[test]
    fn trace_rows_and_validation() {
        let m = run(&shuttle(3, 2)).unwrap();
        assert_eq!(m.trace.len() as u64, m.makespan + 1);
        assert_eq!(m.trace[0].action, TraceAction::Start);
        let map = corridor(3);
        validate_trace(&m.trace, &map).unwrap();

        let mut teleport = m.trace.clone();
        teleport[2].col = 3;
        let errs = validate_trace(&teleport, &map).unwrap_err();
        assert!(
            errs.iter().any(|v| matches!(v, TraceViolation::Motion { conflict: Conflict::Adjacency { .. }, .. })),
            "{errs:?}"
        );
    }

    #[test]
    fn trace_with_two_writers_is_rejected() {
        let map = GridMap::parse("type warehouse\nheight 1\nwidth 5\nmap\nUCC.B\n").unwrap();
        let row = |agent, col, lock: &str| TraceEvent {
            tick: 0,
            agent,
            status: AgentStatus::SfGet,
            row: 0,
            col,
            action: TraceAction::Start,
            lock_event: lock.into(),
        };
        let trace = vec![row(0, 0, "acquire_write@0:1"), row(1, 3, "acquire_write@0:1")];
        let errs = validate_trace(&trace, &map).unwrap_err();
        assert!(matches!(errs[0], TraceViolation::Lock { agent: 1, .. }), "{errs:?}");
        let ok = vec![row(0, 0, "acquire_write@0:1"), row(1, 3, "acquire_read@0:2")];
        validate_trace(&ok, &map).unwrap();
    }

    #[test]
    fn lock_labels_parse() {
        assert_eq!(
            parse_lock_label("release_read@3:14"),
            Some(LockLabel { acquire: false, kind: LockKind::Read, at: Coord::new(3, 14) })
        );
        assert_eq!(parse_lock_label("grab_read@3:14"), None);
        assert_eq!(parse_lock_label("acquire_read@3"), None);
    }

    #[test]
    fn config_validation() {
        let mut c = shuttle(2, 0);
        assert!(matches!(Simulation::new(&c), Err(SimError::Config(_))));
        c.task_limit = 1;
        c.policy = Some(EvictionPolicy::Lru);
        c.carry_capacity = 1;
        assert!(matches!(Simulation::new(&c), Err(SimError::Config(_))));
        let mut c = shuttle(2, 1);
        c.groups[0].agents = AgentPlacement::Count(5);
        assert!(matches!(Simulation::new(&c), Err(SimError::Config(_))));
    }

    #[test]
    fn watchdog_fires_without_progress() {
        // The shelf is walled off from the port.
        let map = Arc::new(GridMap::parse("type warehouse\nheight 1\nwidth 4\nmap\nU.@B\n").unwrap());
        let group = GroupConfig {
            port: Coord::new(0, 0),
            caches: vec![],
            agents: AgentPlacement::Count(1),
            distribution: mk1(),
        };
        let mut c = SimConfig::new(map, vec![group]);
        c.policy = None;
        c.watchdog = 30;
        match run(&c) {
            Err(SimError::Watchdog { tick, .. }) => assert_eq!(tick, 30),
            other => panic!("{other:?}"),
        }
    }
}
