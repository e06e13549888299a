//! Walks one agent through a fill miss and a cache hit by hand.

use lmapf_cm::assigner::{state_graph, AgentState, TaskAssigner};
use lmapf_cm::cache::{CacheGroup, EvictionPolicy};
use lmapf_cm::grid::{Coord, GridMap};
use lmapf_cm::ids::{AgentId, PortId};
use lmapf_cm::taskgen::gen_mk;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (from, to) in state_graph() {
        println!("edge {from} -> {to}");
    }

    let map = GridMap::parse("type warehouse\nheight 3\nwidth 5\nmap\n.....\nUC..B\n.....\n")?.assign_item_kinds(0);
    let port = Coord::new(1, 0);
    let caches = CacheGroup::new(0, &map, map.cache_locs(), 9, EvictionPolicy::Lru, 0)?;
    let stream = gen_mk(10, 1, map.num_kinds(), 0, PortId(0))?;
    let mut ta = TaskAssigner::new(0, port, caches, stream, true, 10);
    let mut agent = AgentState::new(AgentId(0), 0, port);

    let first = ta.draw_task();
    let mut a = ta.initial_assign(&mut agent, first, &map, 0)?;
    for now in 1..12 {
        println!("t={now:2} {} -> {} case={:?} lock={:?}", agent.status, a.new_target, a.case, a.lock_action);
        // Teleport to the target; the planner would walk there.
        agent.loc = agent.target;
        a = if agent.status == lmapf_cm::assigner::AgentStatus::UpEnd {
            let next = ta.draw_task();
            let d = ta.on_up_end_arrival(&mut agent, next, &map, now)?;
            println!("      delivered, hit={}", d.hit);
            d.assignment
        } else {
            ta.on_arrival(&mut agent, &map, now)?
        };
        for e in ta.drain_events() {
            println!("      lock {}", e.label());
        }
    }
    ta.check_invariants()?;
    Ok(())
}
