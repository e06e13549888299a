//! Runs one simulation on the desk fixture and prints its metrics.
//!
//! `cargo run --release --example single_run [seed]`

use std::sync::Arc;

use lmapf_cm::cache::EvictionPolicy;
use lmapf_cm::grid::GridMap;
use lmapf_cm::sim::{self, SimConfig};
use lmapf_cm::taskgen::DistributionKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/desk_15x21.map");
    let map = Arc::new(GridMap::parse(&std::fs::read_to_string(path)?)?.assign_item_kinds(seed));
    for policy in [Some(EvictionPolicy::Lru), None] {
        let mut config = SimConfig::single_port(map.clone(), 8, DistributionKind::Zhang)?;
        config.policy = policy;
        config.seed = seed;
        config.task_limit = 1000;
        let m = sim::run(&config)?;
        println!(
            "{:>4}: completed={} makespan={} throughput={:.4} hit_rate={:.4} waits={}",
            policy.map_or("none".to_string(), |p| format!("{p:?}").to_lowercase()),
            m.completed,
            m.makespan,
            m.throughput,
            m.hit_rate,
            m.waits
        );
        m.check_identities()?;
    }
    Ok(())
}
