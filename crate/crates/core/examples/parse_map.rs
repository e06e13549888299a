//! Parses a warehouse map, labels its shelves and trims its caches.
//!
//! `cargo run --example parse_map [path/to/file.map]`

use std::error::Error;
use std::path::PathBuf;

use lmapf_cm::grid::GridMap;
use lmapf_cm::ids::ItemKind;

fn main() -> Result<(), Box<dyn Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/warehouse_27x71.map"));
    let map = GridMap::parse(&std::fs::read_to_string(&path)?)?.assign_item_kinds(7);
    println!("{}: {}x{} cells", path.display(), map.height(), map.width());
    println!("kinds={} caches={} ports={}", map.num_kinds(), map.cache_locs().len(), map.port_locs().len());
    println!("aisle cells={}", map.aisle_cells().len());

    let port = map.port_locs()[0];
    let field = map.distance_field(port)?;
    let far = map.passable_cells().into_iter().max_by_key(|&c| field.get(c)).unwrap_or(port);
    println!("farthest cell from port {port}: {far} at {} hops", field.get(far));

    let trimmed = map.remove_caches(map.cache_locs().len() / 2)?;
    println!("after trimming: {} caches, first {:?}", trimmed.cache_locs().len(), trimmed.cache_locs().first());
    println!("kind 0 lives at {}", map.shelf_of_kind(ItemKind(0)));
    Ok(())
}
