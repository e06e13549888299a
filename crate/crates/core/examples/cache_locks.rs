//! Readers-writer locks on a cache slot, plus an eviction pick.

use lmapf_cm::cache::{CacheGroup, CacheSlot, EvictionPolicy};
use lmapf_cm::grid::{Coord, GridMap};
use lmapf_cm::ids::{AgentId, CacheId, ItemKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut slot = CacheSlot::new(CacheId(0), Coord::new(0, 1), 3);
    let (a, b, c) = (AgentId(0), AgentId(1), AgentId(2));

    // A writer fills the empty slot while readers are turned away.
    println!("a write: {:?}", slot.try_acquire_write(a));
    println!("b read during write: {:?}", slot.try_acquire_read(b, ItemKind(4), 0));
    slot.release_on_arrival(a)?;
    slot.deposit(ItemKind(4), 2, 1)?;

    // Two items stored, so two readers may reserve and a third may not.
    for agent in [a, b, c] {
        println!("{agent} read: {:?}", slot.try_acquire_read(agent, ItemKind(4), 2));
    }
    println!("c write while read: {:?}", slot.try_acquire_write(c));
    for agent in [a, b] {
        slot.release_on_arrival(agent)?;
        println!("{agent} took {}", slot.withdraw_one(3)?);
    }
    slot.check_invariants()?;

    let map = GridMap::parse("type warehouse\nheight 2\nwidth 4\nmap\nUCCC\nBB..\n")?;
    let mut group = CacheGroup::new(0, &map, map.cache_locs(), 5, EvictionPolicy::Lru, 0)?;
    for (i, cache) in [CacheId(2), CacheId(0), CacheId(1)].into_iter().enumerate() {
        group.try_acquire_write(cache, a)?;
        group.release_on_arrival(cache, a)?;
        group.deposit(cache, ItemKind(i as u32), 1, i as u64)?;
    }
    println!("LRU victim: {:?}", group.select_eviction_victim());
    Ok(())
}
