//! Task assigner: the six-status agent state machine of one port group.
//!
//! ```text
//!            (a) read lock             arrive
//!   UP_END ───────────────▶ CA_GET ───────────▶ UP_END
//!     │  (b) write lock / (d) no lock
//!     ├──────────────────▶ SF_GET ──┬─ no lock ──▶ UP_END
//!     │                      ▲      ├─ write ────▶ CA_ADD ──▶ UP_END
//!     │                      │      └─ readable cache appears ──▶ CA_GET
//!     │  (c) write lock      │
//!     └──────────────────▶ CA_MOV ──▶ SF_ADD ──┘
//! ```
//!
//! Every lock request is a single try: on denial the cascade falls through to
//! the next case instead of waiting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheError, CacheGroup, LockKind, Tick};
use crate::grid::{Coord, GridMap};
use crate::ids::{AgentId, CacheId, ItemKind};
use crate::planner::Priority;
use crate::taskgen::{Task, TaskStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentStatus {
    /// Heading to a shelf for the task item.
    #[serde(rename = "SF_GET")]
    SfGet,
    /// Heading to a cache to evict everything in it.
    #[serde(rename = "CA_MOV")]
    CaMov,
    /// Heading to a cache for the task item.
    #[serde(rename = "CA_GET")]
    CaGet,
    /// Heading to a cache to store items.
    #[serde(rename = "CA_ADD")]
    CaAdd,
    /// Heading to a shelf to return evicted items.
    #[serde(rename = "SF_ADD")]
    SfAdd,
    /// Heading to the port with one task item.
    #[serde(rename = "UP_END")]
    UpEnd,
}

impl AgentStatus {
    pub const ALL: [AgentStatus; 6] = [
        AgentStatus::SfGet,
        AgentStatus::CaMov,
        AgentStatus::CaGet,
        AgentStatus::CaAdd,
        AgentStatus::SfAdd,
        AgentStatus::UpEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentStatus::SfGet => "SF_GET",
            AgentStatus::CaMov => "CA_MOV",
            AgentStatus::CaGet => "CA_GET",
            AgentStatus::CaAdd => "CA_ADD",
            AgentStatus::SfAdd => "SF_ADD",
            AgentStatus::UpEnd => "UP_END",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("listed")
    }

    /// Statuses whose target is a cache grid.
    pub fn targets_cache(self) -> bool {
        matches!(self, AgentStatus::CaGet | AgentStatus::CaAdd | AgentStatus::CaMov)
    }
}

impl fmt::Display for AgentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown status {s:?}"))
    }
}

/// Every status transition the assigner can make.
pub fn state_graph() -> Vec<(AgentStatus, AgentStatus)> {
    use AgentStatus::*;
    vec![
        (UpEnd, CaGet),
        (UpEnd, SfGet),
        (UpEnd, CaMov),
        (SfGet, UpEnd),
        (SfGet, CaAdd),
        (SfGet, CaGet),
        (CaGet, UpEnd),
        (CaAdd, UpEnd),
        (CaMov, SfAdd),
        (SfAdd, SfGet),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeldLock {
    pub cache: CacheId,
    pub kind: LockKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentState {
    pub id: AgentId,
    pub group: usize,
    pub loc: Coord,
    pub status: AgentStatus,
    pub task_kind: ItemKind,
    pub target: Coord,
    /// Carried items; always a single kind.
    pub carrying: Option<(ItemKind, u32)>,
    /// At most one lock is ever held.
    pub held_lock: Option<HeldLock>,
    pub priority: Priority,
    /// The carried task item came out of a cache.
    pub pickup_from_cache: bool,
}

impl AgentState {
    /// A fresh agent before its first assignment.
    pub fn new(id: AgentId, group: usize, loc: Coord) -> Self {
        Self {
            id,
            group,
            loc,
            status: AgentStatus::SfGet,
            task_kind: ItemKind(0),
            target: loc,
            carrying: None,
            held_lock: None,
            priority: Priority::new(id),
            pickup_from_cache: false,
        }
    }

    pub fn carried_items(&self) -> u32 {
        self.carrying.map_or(0, |(_, n)| n)
    }

    /// Status/carry/lock consistency.
    pub fn check_invariants(&self, carry_capacity: u32) -> Result<(), String> {
        let id = self.id;
        let n = self.carried_items();
        if n > carry_capacity {
            return Err(format!("agent {id} carries {n} > {carry_capacity}"));
        }
        if self.carrying.is_some() && n == 0 {
            return Err(format!("agent {id} carries an empty load"));
        }
        let lock = self.held_lock.map(|l| l.kind);
        let ok = match self.status {
            AgentStatus::UpEnd => self.carrying == Some((self.task_kind, 1)) && lock.is_none(),
            AgentStatus::CaGet => n == 0 && lock == Some(LockKind::Read),
            AgentStatus::CaAdd => n >= 2 && lock == Some(LockKind::Write),
            AgentStatus::CaMov => n == 0 && lock == Some(LockKind::Write),
            AgentStatus::SfAdd => n >= 1 && lock.is_none(),
            AgentStatus::SfGet => n == 0 && lock != Some(LockKind::Read),
        };
        if ok {
            Ok(())
        } else {
            Err(format!(
                "agent {id}: status {} with carrying {:?} and lock {:?}",
                self.status, self.carrying, self.held_lock
            ))
        }
    }
}

/// Which branch of the port-arrival cascade fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CascadeCase {
    /// Readable cache found: read lock, CA_GET.
    Readable,
    /// Empty cache found: write lock, SF_GET.
    Empty,
    /// Writable cache found: write lock, CA_MOV.
    Evict,
    /// Nothing usable: plain SF_GET.
    Shelf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub new_status: AgentStatus,
    pub new_target: Coord,
    pub lock_action: Option<(CacheId, LockKind)>,
    pub hit: bool,
    pub case: Option<CascadeCase>,
}

/// Result of delivering an item at the port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    /// The delivered item had been picked up from a cache.
    pub hit: bool,
    pub assignment: Assignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockEvent {
    pub agent: AgentId,
    pub cache: CacheId,
    pub loc: Coord,
    pub kind: LockKind,
    pub acquired: bool,
}

impl LockEvent {
    /// Compact trace form, e.g. `acquire_read@3:4`.
    pub fn label(&self) -> String {
        let verb = if self.acquired { "acquire" } else { "release" };
        let kind = match self.kind {
            LockKind::Read => "read",
            LockKind::Write => "write",
        };
        format!("{verb}_{kind}@{}:{}", self.loc.row, self.loc.col)
    }
}

/// Item movements between shelves, caches, agents and the port.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemLedger {
    pub shelf_withdrawn: u64,
    pub shelf_returned: u64,
    pub delivered: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssignError {
    #[error("protocol violation for agent {agent}: {reason}")]
    Protocol { agent: AgentId, reason: String },
    #[error(transparent)]
    Cache(#[from] CacheError),
}

fn protocol(agent: &AgentState, reason: impl Into<String>) -> AssignError {
    AssignError::Protocol { agent: agent.id, reason: reason.into() }
}

/// Assigner for one port group: its port, caches, task stream and carry rules.
#[derive(Debug, Clone)]
pub struct TaskAssigner {
    pub group_id: usize,
    port: Coord,
    caches: CacheGroup,
    stream: TaskStream,
    /// `false` reduces the cascade to case (d): plain lifelong MAPF.
    caching: bool,
    carry_capacity: u32,
    events: Vec<LockEvent>,
    ledger: ItemLedger,
}

impl TaskAssigner {
    pub fn new(
        group_id: usize,
        port: Coord,
        caches: CacheGroup,
        stream: TaskStream,
        caching: bool,
        carry_capacity: u32,
    ) -> Self {
        Self {
            group_id,
            port,
            caches,
            stream,
            caching,
            carry_capacity,
            events: Vec::new(),
            ledger: ItemLedger::default(),
        }
    }

    pub fn port(&self) -> Coord {
        self.port
    }

    pub fn caches(&self) -> &CacheGroup {
        &self.caches
    }

    pub fn caching(&self) -> bool {
        self.caching
    }

    pub fn carry_capacity(&self) -> u32 {
        self.carry_capacity
    }

    pub fn ledger(&self) -> ItemLedger {
        self.ledger
    }

    pub fn draw_task(&mut self) -> Task {
        self.stream.next_task()
    }

    pub fn drain_events(&mut self) -> std::vec::Drain<'_, LockEvent> {
        self.events.drain(..)
    }

    fn record(&mut self, agent: AgentId, cache: CacheId, kind: LockKind, acquired: bool) -> Result<(), CacheError> {
        let loc = self.caches.slot(cache)?.loc;
        self.events.push(LockEvent { agent, cache, loc, kind, acquired });
        Ok(())
    }

    fn apply(agent: &mut AgentState, a: Assignment) -> Assignment {
        agent.status = a.new_status;
        agent.target = a.new_target;
        a
    }

    /// Cases (a) to (d), tried in order; the first that succeeds wins.
    fn cascade(&mut self, agent: &mut AgentState, map: &GridMap, now: Tick) -> Result<Assignment, AssignError> {
        let kind = agent.task_kind;
        let shelf = map.shelf_of_kind(kind);
        if self.caching {
            if let Some(c) = self.caches.find_readable(kind, agent.loc) {
                if self.caches.try_acquire_read(c, agent.id, kind, now)?.is_granted() {
                    return self.locked(agent, c, LockKind::Read, AgentStatus::CaGet, None, CascadeCase::Readable);
                }
            }
            if let Some(c) = self.caches.find_empty(self.port) {
                if self.caches.try_acquire_write(c, agent.id)?.is_granted() {
                    return self.locked(agent, c, LockKind::Write, AgentStatus::SfGet, Some(shelf), CascadeCase::Empty);
                }
            }
            if let Some(c) = self.caches.select_eviction_victim() {
                if self.caches.try_acquire_write(c, agent.id)?.is_granted() {
                    return self.locked(agent, c, LockKind::Write, AgentStatus::CaMov, None, CascadeCase::Evict);
                }
            }
        }
        let a = Assignment {
            new_status: AgentStatus::SfGet,
            new_target: shelf,
            lock_action: None,
            hit: false,
            case: Some(CascadeCase::Shelf),
        };
        Ok(Self::apply(agent, a))
    }

    fn locked(
        &mut self,
        agent: &mut AgentState,
        cache: CacheId,
        kind: LockKind,
        status: AgentStatus,
        target: Option<Coord>,
        case: CascadeCase,
    ) -> Result<Assignment, AssignError> {
        agent.held_lock = Some(HeldLock { cache, kind });
        self.record(agent.id, cache, kind, true)?;
        let new_target = match target {
            Some(t) => t,
            None => self.caches.slot(cache)?.loc,
        };
        let a = Assignment {
            new_status: status,
            new_target,
            lock_action: Some((cache, kind)),
            hit: kind == LockKind::Read,
            case: Some(case),
        };
        Ok(Self::apply(agent, a))
    }

    /// First assignment at simulation start. Caches are empty then, so the
    /// agent always heads to its shelf; it takes a fill lock on an empty
    /// cache when one is free.
    pub fn initial_assign(
        &mut self,
        agent: &mut AgentState,
        task: Task,
        map: &GridMap,
        now: Tick,
    ) -> Result<Assignment, AssignError> {
        if agent.held_lock.is_some() || agent.carrying.is_some() {
            return Err(protocol(agent, "initial assignment of a busy agent"));
        }
        agent.task_kind = task.kind;
        agent.pickup_from_cache = false;
        self.cascade(agent, map, now)
    }

    /// Delivers the carried item at the port and assigns `next`.
    pub fn on_up_end_arrival(
        &mut self,
        agent: &mut AgentState,
        next: Task,
        map: &GridMap,
        now: Tick,
    ) -> Result<Delivery, AssignError> {
        if agent.status != AgentStatus::UpEnd || agent.loc != self.port {
            return Err(protocol(agent, format!("port arrival in status {} at {}", agent.status, agent.loc)));
        }
        if agent.carrying != Some((agent.task_kind, 1)) || agent.held_lock.is_some() {
            return Err(protocol(agent, format!("delivering {:?} with lock {:?}", agent.carrying, agent.held_lock)));
        }
        agent.carrying = None;
        self.ledger.delivered += 1;
        let hit = std::mem::take(&mut agent.pickup_from_cache);
        agent.task_kind = next.kind;
        let assignment = self.cascade(agent, map, now)?;
        Ok(Delivery { hit, assignment })
    }

    /// Releases the lock held on the cache the agent just reached.
    fn release_target_lock(&mut self, agent: &mut AgentState, expected: LockKind) -> Result<CacheId, AssignError> {
        let Some(held) = agent.held_lock else {
            return Err(protocol(agent, format!("{} arrival without a lock", agent.status)));
        };
        let slot_loc = self.caches.slot(held.cache)?.loc;
        if held.kind != expected || slot_loc != agent.loc {
            return Err(protocol(agent, format!("{} arrival at {} holding {:?}", agent.status, agent.loc, held)));
        }
        let released = self.caches.release_on_arrival(held.cache, agent.id)?;
        debug_assert_eq!(released, expected);
        agent.held_lock = None;
        self.record(agent.id, held.cache, expected, false)?;
        Ok(held.cache)
    }

    /// Handles arrival at the current target for every status but UP_END.
    pub fn on_arrival(&mut self, agent: &mut AgentState, map: &GridMap, now: Tick) -> Result<Assignment, AssignError> {
        if agent.loc != agent.target {
            return Err(protocol(agent, "arrival away from target"));
        }
        let plain = |status, target| Assignment {
            new_status: status,
            new_target: target,
            lock_action: None,
            hit: false,
            case: None,
        };
        let a = match agent.status {
            AgentStatus::CaGet => {
                if agent.carrying.is_some() {
                    return Err(protocol(agent, "CA_GET agent already carries items"));
                }
                let cache = self.release_target_lock(agent, LockKind::Read)?;
                let kind = self.caches.withdraw_one(cache, now)?;
                if kind != agent.task_kind {
                    return Err(protocol(agent, format!("cache held kind {kind}, task wants {}", agent.task_kind)));
                }
                agent.carrying = Some((kind, 1));
                agent.pickup_from_cache = true;
                plain(AgentStatus::UpEnd, self.port)
            }
            AgentStatus::SfGet => {
                if agent.loc != map.shelf_of_kind(agent.task_kind) || agent.carrying.is_some() {
                    return Err(protocol(agent, "SF_GET arrival away from its shelf or already loaded"));
                }
                match agent.held_lock {
                    None => {
                        self.ledger.shelf_withdrawn += 1;
                        agent.carrying = Some((agent.task_kind, 1));
                        plain(AgentStatus::UpEnd, self.port)
                    }
                    Some(HeldLock { cache, kind: LockKind::Write }) => {
                        let capacity = self.caches.slot(cache)?.capacity;
                        let load = self.carry_capacity.min(capacity.saturating_add(1));
                        if load < 2 {
                            return Err(protocol(agent, format!("fill load of {load} leaves nothing to store")));
                        }
                        self.ledger.shelf_withdrawn += u64::from(load);
                        agent.carrying = Some((agent.task_kind, load));
                        plain(AgentStatus::CaAdd, self.caches.slot(cache)?.loc)
                    }
                    Some(held) => return Err(protocol(agent, format!("SF_GET holding {held:?}"))),
                }
            }
            AgentStatus::CaAdd => {
                let Some((kind, n)) = agent.carrying.filter(|&(k, n)| k == agent.task_kind && n >= 2) else {
                    return Err(protocol(agent, format!("CA_ADD carrying {:?}", agent.carrying)));
                };
                let cache = self.release_target_lock(agent, LockKind::Write)?;
                self.caches.deposit(cache, kind, n - 1, now)?;
                agent.carrying = Some((kind, 1));
                plain(AgentStatus::UpEnd, self.port)
            }
            AgentStatus::CaMov => {
                if agent.carrying.is_some() {
                    return Err(protocol(agent, "CA_MOV agent already carries items"));
                }
                let cache = self.release_target_lock(agent, LockKind::Write)?;
                let (kind, n) = self.caches.withdraw_all(cache)?;
                agent.carrying = Some((kind, n));
                plain(AgentStatus::SfAdd, map.shelf_of_kind(kind))
            }
            AgentStatus::SfAdd => {
                let Some((kind, n)) = agent.carrying else {
                    return Err(protocol(agent, "SF_ADD with nothing to return"));
                };
                if agent.loc != map.shelf_of_kind(kind) {
                    return Err(protocol(agent, "SF_ADD arrival at the wrong shelf"));
                }
                self.ledger.shelf_returned += u64::from(n);
                agent.carrying = None;
                plain(AgentStatus::SfGet, map.shelf_of_kind(agent.task_kind))
            }
            AgentStatus::UpEnd => return Err(protocol(agent, "UP_END arrivals go through on_up_end_arrival")),
        };
        Ok(Self::apply(agent, a))
    }

    /// Switches a lock-free SF_GET agent to a cache that now holds its item.
    pub fn per_update_retarget(
        &mut self,
        agent: &mut AgentState,
        now: Tick,
    ) -> Result<Option<Assignment>, AssignError> {
        if !self.caching || agent.status != AgentStatus::SfGet || agent.held_lock.is_some() {
            return Ok(None);
        }
        let Some(c) = self.caches.find_readable(agent.task_kind, agent.loc) else {
            return Ok(None);
        };
        if !self.caches.try_acquire_read(c, agent.id, agent.task_kind, now)?.is_granted() {
            return Ok(None);
        }
        agent.held_lock = Some(HeldLock { cache: c, kind: LockKind::Read });
        self.record(agent.id, c, LockKind::Read, true)?;
        let a = Assignment {
            new_status: AgentStatus::CaGet,
            new_target: self.caches.slot(c)?.loc,
            lock_action: Some((c, LockKind::Read)),
            hit: true,
            case: None,
        };
        Ok(Some(Self::apply(agent, a)))
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        self.caches.check_invariants()
    }
}
