//! Seeded generators shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use lmapf_cm::cache::EvictionPolicy;
use lmapf_cm::grid::{Coord, GridMap};
use lmapf_cm::sim::{AgentPlacement, GroupConfig, SimConfig};
use lmapf_cm::taskgen::{DistributionKind, FrequencyTable};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn load_fixture_map(name: &str) -> GridMap {
    GridMap::parse(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

/// A random warehouse of at most 15x21 cells.
///
/// Ports sit on the left edge with caches just right of them and shelves
/// further right. Obstacles are single interior cells with no obstacle among
/// their eight neighbours, so the free space stays connected and has no dead
/// ends.
pub struct FuzzMap {
    pub text: String,
    pub ports: Vec<Coord>,
    /// Caches of each port.
    pub caches: Vec<Vec<Coord>>,
    pub aisles: usize,
    pub shelves: usize,
}

pub fn fuzz_map(rng: &mut ChaCha8Rng, max_h: usize, max_w: usize, max_caches: usize) -> FuzzMap {
    let h = rng.gen_range(5..=max_h);
    let w = rng.gen_range(7..=max_w);
    let mut g = vec![vec!['.'; w]; h];

    let two_ports = h >= 9 && rng.gen_bool(0.3);
    let ports: Vec<Coord> = if two_ports {
        let a = rng.gen_range(1..h / 2);
        let b = rng.gen_range(h / 2 + 1..h - 1);
        vec![Coord::new(a, 0), Coord::new(b, 0)]
    } else {
        vec![Coord::new(rng.gen_range(0..h), 0)]
    };
    for p in &ports {
        g[p.row][0] = 'U';
    }

    let total_caches = rng.gen_range(0..=max_caches);
    let mut caches = vec![Vec::new(); ports.len()];
    let mut slots: Vec<(usize, Coord)> = Vec::new();
    for (i, p) in ports.iter().enumerate() {
        for r in p.row.saturating_sub(2)..=(p.row + 2).min(h - 1) {
            for c in 1..=3 {
                slots.push((i, Coord::new(r, c)));
            }
        }
    }
    slots.shuffle(rng);
    for (i, c) in slots {
        if caches.iter().map(Vec::len).sum::<usize>() == total_caches {
            break;
        }
        if g[c.row][c.col] == '.' {
            g[c.row][c.col] = 'C';
            caches[i].push(c);
        }
    }

    let density = rng.gen_range(0.15..0.5);
    for row in g.iter_mut() {
        for cell in row.iter_mut().skip(5) {
            if rng.gen_bool(density) {
                *cell = 'B';
            }
        }
    }
    // At least ten shelves, enough for every distribution.
    let mut shelves: usize = g.iter().flatten().filter(|&&c| c == 'B').count();
    let mut c = 5;
    while shelves < 10 {
        for row in g.iter_mut() {
            if row[c] == '.' && shelves < 10 {
                row[c] = 'B';
                shelves += 1;
            }
        }
        c += 1;
    }

    for r in 1..h - 1 {
        for c in 4..w - 1 {
            let clear = (r - 1..=r + 1).all(|rr| (c - 1..=c + 1).all(|cc| g[rr][cc] != '@'));
            if clear && g[r][c] == '.' && rng.gen_bool(0.06) {
                g[r][c] = '@';
            }
        }
    }

    let aisles = g.iter().flatten().filter(|&&c| c == '.').count();
    let mut text = format!("type warehouse\nheight {h}\nwidth {w}\nmap\n");
    for row in &g {
        text.extend(row.iter());
        text.push('\n');
    }
    FuzzMap { text, ports, caches, aisles, shelves }
}

pub const POLICIES: [Option<EvictionPolicy>; 4] =
    [Some(EvictionPolicy::Lru), Some(EvictionPolicy::Fifo), Some(EvictionPolicy::Random), None];

pub fn random_table(rng: &mut ChaCha8Rng, kinds: usize) -> FrequencyTable {
    let n = rng.gen_range(1..=kinds);
    let offset = if rng.gen_bool(0.5) { 0 } else { rng.gen_range(1000..9000) };
    let mut ids: Vec<u64> = (0..kinds as u64 + offset).collect();
    ids.shuffle(rng);
    FrequencyTable { entries: ids[..n].iter().map(|&k| (k, rng.gen_range(0.01..10.0))).collect() }
}

pub fn random_distribution(rng: &mut ChaCha8Rng, kinds: usize, which: usize) -> DistributionKind {
    match which % 3 {
        0 => {
            let window = rng.gen_range(1..=200);
            DistributionKind::Mk { window, kinds_per_window: rng.gen_range(1..=kinds.min(window).min(10)) }
        }
        1 => DistributionKind::Zhang,
        _ => DistributionKind::Rdd { table: random_table(rng, kinds) },
    }
}

/// A fuzzed run: at most 8 agents, 8 caches and 200 tasks; policy and
/// distribution cycle with `seed` so every combination appears.
pub fn fuzz_config(seed: u64) -> SimConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let fm = fuzz_map(&mut rng, 15, 21, 8);
    let map = GridMap::parse(&fm.text).unwrap().assign_item_kinds(seed);
    let agents = rng.gen_range(1..=8usize).min(fm.aisles);
    let groups: Vec<GroupConfig> = fm
        .ports
        .iter()
        .zip(&fm.caches)
        .enumerate()
        .map(|(i, (&port, caches))| GroupConfig {
            port,
            caches: caches.clone(),
            agents: AgentPlacement::Count(agents / fm.ports.len() + usize::from(i < agents % fm.ports.len())),
            distribution: random_distribution(&mut rng, fm.shelves, (seed / 4) as usize),
        })
        .filter(|g| !g.agents.is_empty())
        .collect();
    let mut config = SimConfig::new(Arc::new(map), groups);
    config.policy = POLICIES[(seed % 4) as usize];
    config.carry_capacity = rng.gen_range(2..=100);
    if rng.gen_bool(0.3) {
        config.cache_capacity = Some(rng.gen_range(1..=config.carry_capacity));
    }
    config.task_limit = rng.gen_range(1..=200);
    config.seed = seed;
    config.watchdog = 5_000;
    config.record_trace = true;
    config.check_invariants = true;
    config
}
