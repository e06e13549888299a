//! Records a trace, checks it, then shows what a corrupted row looks like.

use std::sync::Arc;

use lmapf_cm::grid::GridMap;
use lmapf_cm::sim::{self, validate_trace, SimConfig};
use lmapf_cm::taskgen::DistributionKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/desk_15x21.map");
    let map = Arc::new(GridMap::parse(&std::fs::read_to_string(path)?)?.assign_item_kinds(0));
    let mut config = SimConfig::single_port(map.clone(), 5, DistributionKind::Zhang)?;
    config.task_limit = 50;
    config.record_trace = true;
    let mut trace = sim::run(&config)?.trace;
    println!("{} rows: {:?}", trace.len(), validate_trace(&trace, &map).map(|_| "ok"));

    // Put two agents on the same cell at tick 1.
    let first = trace.iter().position(|e| e.tick == 1).unwrap();
    let (row, col) = (trace[first].row, trace[first].col);
    trace[first + 1].row = row;
    trace[first + 1].col = col;
    match validate_trace(&trace, &map) {
        Ok(()) => println!("corruption went unnoticed"),
        Err(violations) => violations.iter().take(3).for_each(|v| println!("violation: {v}")),
    }
    Ok(())
}
