//! Renders the wait heatmap of a short run as PGM and CSV.

use std::sync::Arc;

use lmapf_cm::artifacts::{heatmap_pixels, save_heatmap};
use lmapf_cm::grid::GridMap;
use lmapf_cm::sim::{self, SimConfig};
use lmapf_cm::taskgen::DistributionKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/desk_15x21.map");
    let map = Arc::new(GridMap::parse(&std::fs::read_to_string(path)?)?.assign_item_kinds(0));
    let mut config = SimConfig::single_port(map.clone(), 10, DistributionKind::Zhang)?;
    config.task_limit = 400;
    let m = sim::run(&config)?;

    let pixels = heatmap_pixels(&m.wait_counts, Some(&map));
    for row in pixels.chunks(map.width()) {
        let line: String = row
            .iter()
            .map(|&p| match p {
                0..=63 => '#',
                64..=127 => '+',
                128 => '@',
                129..=254 => '.',
                255 => ' ',
            })
            .collect();
        println!("|{line}|");
    }
    let stem = std::env::temp_dir().join("lmapf-cm-heatmap");
    save_heatmap(&m.wait_counts, Some(&map), &stem)?;
    println!("wrote {}.pgm and .csv", stem.display());
    Ok(())
}
