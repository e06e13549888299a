//! Cache grid state and locking.
//!
//! Every cache slot holds at most one item kind and carries its own
//! readers-writer lock. Locks never block: an acquisition either succeeds on
//! the spot or is denied, and the caller picks another plan.
//!
//! A read lock reserves one stored item for its holder, so the number of read
//! shares on a slot can never exceed the number of items it stores.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Coord, DistanceField, GridMap, MapError, UNREACHABLE};
use crate::ids::{AgentId, CacheId, ItemKind};

pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LockKind {
    Read,
    Write,
}

/// Outcome of a non-blocking lock attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockOutcome {
    Granted,
    Denied,
}

impl LockOutcome {
    pub fn is_granted(self) -> bool {
        self == LockOutcome::Granted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvictionPolicy {
    Lru,
    Fifo,
    Random,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("agent {agent} holds no lock on cache {cache}")]
    NoLockHeld { agent: AgentId, cache: CacheId },
    #[error("cache {0} is empty")]
    Empty(CacheId),
    #[error("cache {0} is not empty")]
    NotEmpty(CacheId),
    #[error("zero-item deposit into cache {0}")]
    ZeroDeposit(CacheId),
    #[error("deposit of {items} items exceeds capacity {capacity} of cache {cache}")]
    OverCapacity { cache: CacheId, items: u32, capacity: u32 },
    #[error("agent {agent} does not hold the write lock on cache {cache}")]
    NotWriter { agent: AgentId, cache: CacheId },
    #[error("agent {agent} does not hold a read lock on cache {cache}")]
    NotReader { agent: AgentId, cache: CacheId },
    #[error("cache {0} is not in this group")]
    UnknownCache(CacheId),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CacheSlot {
    pub cache_id: CacheId,
    pub loc: Coord,
    pub stored_kind: Option<ItemKind>,
    pub count: u32,
    pub reserved: u32,
    /// Read-lock holders, sorted by id.
    pub readers: Vec<AgentId>,
    pub writer: Option<AgentId>,
    pub capacity: u32,
    pub last_use_tick: Tick,
    pub deposit_tick: Tick,
}

impl CacheSlot {
    pub fn new(cache_id: CacheId, loc: Coord, capacity: u32) -> Self {
        Self {
            cache_id,
            loc,
            stored_kind: None,
            count: 0,
            reserved: 0,
            readers: Vec::new(),
            writer: None,
            capacity,
            last_use_tick: 0,
            deposit_tick: 0,
        }
    }

    /// Matching kind, no writer, and an unreserved item left.
    pub fn is_readable(&self, kind: ItemKind) -> bool {
        self.stored_kind == Some(kind) && self.writer.is_none() && self.reserved < self.count
    }

    /// No items and no locks.
    pub fn is_empty_unlocked(&self) -> bool {
        self.count == 0 && self.readers.is_empty() && self.writer.is_none()
    }

    /// An eviction candidate: stores items and nobody holds a lock.
    pub fn is_writable(&self) -> bool {
        self.count >= 1 && self.readers.is_empty() && self.writer.is_none()
    }

    pub fn holds_lock(&self, agent: AgentId) -> Option<LockKind> {
        if self.writer == Some(agent) {
            Some(LockKind::Write)
        } else if self.readers.binary_search(&agent).is_ok() {
            Some(LockKind::Read)
        } else {
            None
        }
    }

    /// Grants a read share iff the slot stores `kind`, has no writer and still
    /// has an unreserved item.
    pub fn try_acquire_read(&mut self, agent: AgentId, kind: ItemKind, now: Tick) -> LockOutcome {
        debug_assert!(self.holds_lock(agent).is_none(), "agent {agent} already holds a lock");
        if self.holds_lock(agent).is_some() || !self.is_readable(kind) {
            return LockOutcome::Denied;
        }
        let pos = self.readers.binary_search(&agent).unwrap_err();
        self.readers.insert(pos, agent);
        self.reserved += 1;
        self.last_use_tick = now;
        LockOutcome::Granted
    }

    /// Grants the exclusive lock iff no reader and no writer is present.
    pub fn try_acquire_write(&mut self, agent: AgentId) -> LockOutcome {
        debug_assert!(self.holds_lock(agent).is_none(), "agent {agent} already holds a lock");
        if !self.readers.is_empty() || self.writer.is_some() {
            return LockOutcome::Denied;
        }
        self.writer = Some(agent);
        LockOutcome::Granted
    }

    /// Drops whatever lock `agent` holds here.
    pub fn release_on_arrival(&mut self, agent: AgentId) -> Result<LockKind, CacheError> {
        if self.writer == Some(agent) {
            self.writer = None;
            return Ok(LockKind::Write);
        }
        match self.readers.binary_search(&agent) {
            Ok(pos) => {
                self.readers.remove(pos);
                self.reserved -= 1;
                Ok(LockKind::Read)
            }
            Err(_) => Err(CacheError::NoLockHeld { agent, cache: self.cache_id }),
        }
    }

    /// Takes one item out after a read share was released.
    pub fn withdraw_one(&mut self, now: Tick) -> Result<ItemKind, CacheError> {
        let kind = self.stored_kind.filter(|_| self.count > 0).ok_or(CacheError::Empty(self.cache_id))?;
        self.count -= 1;
        if self.count == 0 {
            self.stored_kind = None;
        }
        self.last_use_tick = now;
        Ok(kind)
    }

    /// Empties the slot, returning its contents.
    pub fn withdraw_all(&mut self) -> Result<(ItemKind, u32), CacheError> {
        let kind = self.stored_kind.filter(|_| self.count > 0).ok_or(CacheError::Empty(self.cache_id))?;
        let items = self.count;
        self.count = 0;
        self.stored_kind = None;
        Ok((kind, items))
    }

    /// Fills an empty slot with `items` of `kind`.
    pub fn deposit(&mut self, kind: ItemKind, items: u32, now: Tick) -> Result<(), CacheError> {
        if self.count > 0 {
            return Err(CacheError::NotEmpty(self.cache_id));
        }
        if items == 0 {
            return Err(CacheError::ZeroDeposit(self.cache_id));
        }
        if items > self.capacity {
            return Err(CacheError::OverCapacity { cache: self.cache_id, items, capacity: self.capacity });
        }
        self.stored_kind = Some(kind);
        self.count = items;
        self.deposit_tick = now;
        self.last_use_tick = now;
        Ok(())
    }

    /// Structural invariants; returns a description of the first breach.
    pub fn check_invariants(&self) -> Result<(), String> {
        let id = self.cache_id;
        if self.reserved > self.count {
            return Err(format!("cache {id}: reserved {} > count {}", self.reserved, self.count));
        }
        if self.count > self.capacity {
            return Err(format!("cache {id}: count {} > capacity {}", self.count, self.capacity));
        }
        if self.readers.len() != self.reserved as usize {
            return Err(format!("cache {id}: {} readers but {} reserved", self.readers.len(), self.reserved));
        }
        if self.writer.is_some() && !self.readers.is_empty() {
            return Err(format!("cache {id}: writer and readers coexist"));
        }
        if (self.count == 0) != self.stored_kind.is_none() {
            return Err(format!("cache {id}: count {} with kind {:?}", self.count, self.stored_kind));
        }
        if self.readers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("cache {id}: reader set not strictly sorted"));
        }
        Ok(())
    }
}

/// Running totals used for conservation checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub read_grants: u64,
    pub read_releases: u64,
    pub write_grants: u64,
    pub write_releases: u64,
    pub withdraw_one: u64,
    pub withdraw_all_items: u64,
    pub deposited_items: u64,
    pub evictions: u64,
}

/// The cache slots of one port group, with the group's replacement policy.
#[derive(Debug, Clone)]
pub struct CacheGroup {
    pub group_id: usize,
    slots: Vec<CacheSlot>,
    fields: Vec<Arc<DistanceField>>,
    policy: EvictionPolicy,
    rng: ChaCha8Rng,
    stats: CacheStats,
}

impl CacheGroup {
    /// Builds a group over the given cache cells of `map`.
    pub fn new(
        group_id: usize,
        map: &GridMap,
        caches: &[Coord],
        capacity: u32,
        policy: EvictionPolicy,
        seed: u64,
    ) -> Result<Self, CacheError> {
        let mut slots = Vec::with_capacity(caches.len());
        let mut fields = Vec::with_capacity(caches.len());
        for &loc in caches {
            let id = map.cache_id_at(loc).ok_or(MapError::Blocked(loc))?;
            slots.push(CacheSlot::new(id, loc, capacity));
            fields.push(Arc::new(map.distance_field(loc)?));
        }
        let mut order: Vec<usize> = (0..slots.len()).collect();
        order.sort_by_key(|&i| slots[i].cache_id);
        let slots: Vec<CacheSlot> = order.iter().map(|&i| slots[i].clone()).collect();
        let fields = order.iter().map(|&i| fields[i].clone()).collect();
        Ok(Self { group_id, slots, fields, policy, rng: ChaCha8Rng::seed_from_u64(seed), stats: CacheStats::default() })
    }

    pub fn policy(&self) -> EvictionPolicy {
        self.policy
    }

    pub fn slots(&self) -> &[CacheSlot] {
        &self.slots
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn position(&self, cache: CacheId) -> Result<usize, CacheError> {
        self.slots.binary_search_by_key(&cache, |s| s.cache_id).map_err(|_| CacheError::UnknownCache(cache))
    }

    pub fn slot(&self, cache: CacheId) -> Result<&CacheSlot, CacheError> {
        Ok(&self.slots[self.position(cache)?])
    }

    /// Hop distance between `from` and the slot's cell.
    pub fn distance(&self, cache: CacheId, from: Coord) -> Result<u32, CacheError> {
        Ok(self.fields[self.position(cache)?].get(from))
    }

    fn nearest(&self, from: Coord, pred: impl Fn(&CacheSlot) -> bool) -> Option<CacheId> {
        self.slots
            .iter()
            .zip(&self.fields)
            .filter(|(s, _)| pred(s))
            .map(|(s, f)| (f.get(from), s.cache_id))
            .filter(|&(d, _)| d != UNREACHABLE)
            .min()
            .map(|(_, id)| id)
    }

    /// Nearest readable slot for `kind`, ties by cache id.
    pub fn find_readable(&self, kind: ItemKind, from: Coord) -> Option<CacheId> {
        self.nearest(from, |s| s.is_readable(kind))
    }

    /// Nearest empty unlocked slot to `port`, ties by cache id.
    pub fn find_empty(&self, port: Coord) -> Option<CacheId> {
        self.nearest(port, CacheSlot::is_empty_unlocked)
    }

    /// Picks a writable slot to evict according to the group policy.
    pub fn select_eviction_victim(&mut self) -> Option<CacheId> {
        let writable = self.slots.iter().filter(|s| s.is_writable());
        match self.policy {
            EvictionPolicy::Lru => writable.min_by_key(|s| (s.last_use_tick, s.cache_id)).map(|s| s.cache_id),
            EvictionPolicy::Fifo => writable.min_by_key(|s| (s.deposit_tick, s.cache_id)).map(|s| s.cache_id),
            EvictionPolicy::Random => {
                let ids: Vec<CacheId> = writable.map(|s| s.cache_id).collect();
                ids.choose(&mut self.rng).copied()
            }
        }
    }

    pub fn try_acquire_read(
        &mut self,
        cache: CacheId,
        agent: AgentId,
        kind: ItemKind,
        now: Tick,
    ) -> Result<LockOutcome, CacheError> {
        let pos = self.position(cache)?;
        let out = self.slots[pos].try_acquire_read(agent, kind, now);
        if out.is_granted() {
            self.stats.read_grants += 1;
        }
        Ok(out)
    }

    pub fn try_acquire_write(&mut self, cache: CacheId, agent: AgentId) -> Result<LockOutcome, CacheError> {
        let pos = self.position(cache)?;
        let out = self.slots[pos].try_acquire_write(agent);
        if out.is_granted() {
            self.stats.write_grants += 1;
        }
        Ok(out)
    }

    pub fn release_on_arrival(&mut self, cache: CacheId, agent: AgentId) -> Result<LockKind, CacheError> {
        let pos = self.position(cache)?;
        let kind = self.slots[pos].release_on_arrival(agent)?;
        match kind {
            LockKind::Read => self.stats.read_releases += 1,
            LockKind::Write => self.stats.write_releases += 1,
        }
        Ok(kind)
    }

    pub fn withdraw_one(&mut self, cache: CacheId, now: Tick) -> Result<ItemKind, CacheError> {
        let pos = self.position(cache)?;
        let kind = self.slots[pos].withdraw_one(now)?;
        self.stats.withdraw_one += 1;
        Ok(kind)
    }

    pub fn withdraw_all(&mut self, cache: CacheId) -> Result<(ItemKind, u32), CacheError> {
        let pos = self.position(cache)?;
        let out = self.slots[pos].withdraw_all()?;
        self.stats.withdraw_all_items += u64::from(out.1);
        self.stats.evictions += 1;
        Ok(out)
    }

    pub fn deposit(&mut self, cache: CacheId, kind: ItemKind, items: u32, now: Tick) -> Result<(), CacheError> {
        let pos = self.position(cache)?;
        self.slots[pos].deposit(kind, items, now)?;
        self.stats.deposited_items += u64::from(items);
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        self.slots.iter().try_for_each(CacheSlot::check_invariants)
    }

    /// Items currently stored over all slots of the group.
    pub fn stored_items(&self) -> u64 {
        self.slots.iter().map(|s| u64::from(s.count)).sum()
    }
}
