//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with its own harness so the lines are always printed; the process
//! exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::process::Command;
use std::time::{Duration, Instant};

use lmapf_cm::artifacts;
use lmapf_cm::assigner::{state_graph, AgentState, AgentStatus, CascadeCase, TaskAssigner};
use lmapf_cm::bench::{BaseSpec, DistChoice, Inputs, Point, PolicyChoice};
use lmapf_cm::cache::{CacheGroup, CacheSlot, EvictionPolicy, LockKind, LockOutcome};
use lmapf_cm::grid::{Coord, GridMap};
use lmapf_cm::ids::{AgentId, CacheId, ItemKind, PortId};
use lmapf_cm::sim::{self, AgentPlacement, GroupConfig, SimConfig, SimError, SimMetrics};
use lmapf_cm::taskgen::{gen_mk, gen_zhang, verify_mk_window, zhang_classes, DistributionKind, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct FuzzRun {
    config: SimConfig,
    result: Result<SimMetrics, SimError>,
    validate_exit: Option<i32>,
}

const FUZZ_RUNS: u64 = 200;

fn fuzz_suite() -> (Vec<FuzzRun>, Duration) {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_lmapf-cm");
    let runs = (0..FUZZ_RUNS)
        .map(|seed| {
            let config = common::fuzz_config(seed);
            let result = sim::run(&config);
            let validate_exit = result.as_ref().ok().map(|m| {
                let trace = dir.path().join(format!("trace-{seed}.csv"));
                let map = dir.path().join(format!("map-{seed}.map"));
                artifacts::save_trace(&m.trace, &trace).unwrap();
                std::fs::write(&map, config.map.to_map_text()).unwrap();
                let out = Command::new(bin)
                    .arg("validate")
                    .arg("--trace")
                    .arg(&trace)
                    .arg("--map")
                    .arg(&map)
                    .output()
                    .unwrap();
                out.status.code().unwrap_or(-1)
            });
            FuzzRun { config, result, validate_exit }
        })
        .collect();
    (runs, start.elapsed())
}

fn criterion_1(runs: &[FuzzRun], elapsed: Duration) -> Verdict {
    let failed: Vec<String> = runs
        .iter()
        .filter(|r| r.validate_exit != Some(0))
        .map(|r| match &r.result {
            Ok(_) => format!("seed {} validate exit {:?}", r.config.seed, r.validate_exit),
            Err(e) => format!("seed {} run error {}", r.config.seed, e.to_string().lines().next().unwrap_or("")),
        })
        .collect();
    let policies: BTreeSet<String> = runs.iter().map(|r| format!("{:?}", r.config.policy)).collect();
    let dists: BTreeSet<&str> = runs
        .iter()
        .flat_map(|r| r.config.groups.iter())
        .map(|g| match g.distribution {
            DistributionKind::Mk { .. } => "mk",
            DistributionKind::Zhang => "zhang",
            DistributionKind::Rdd { .. } => "rdd",
        })
        .collect();
    let bounded = runs.iter().all(|r| {
        let m = &r.config.map;
        m.height() <= 15
            && m.width() <= 21
            && r.config.num_agents() <= 8
            && m.cache_locs().len() <= 8
            && r.config.task_limit <= 200
    });
    let pass =
        failed.is_empty() && elapsed < Duration::from_secs(60) && policies.len() == 4 && dists.len() == 3 && bounded;
    verdict(
        pass,
        format!(
            "{} fuzzed runs, {} failed {:?}, policies {}, distributions {:?}, {:.1}s",
            runs.len(),
            failed.len(),
            failed.iter().take(3).collect::<Vec<_>>(),
            policies.len(),
            dists,
            elapsed.as_secs_f64()
        ),
    )
}

/// Scripted lock operations on one slot against a reference model.
fn lock_interleavings(scripts: u64, steps: usize) -> Result<(), String> {
    for s in 0..scripts {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let agents = rng.gen_range(2..=5u32);
        let capacity = rng.gen_range(1..=6);
        let mut slot = CacheSlot::new(CacheId(0), Coord::new(0, 1), capacity);
        let mut held: Vec<Option<LockKind>> = vec![None; agents as usize];
        for t in 0..steps {
            let a = rng.gen_range(0..agents);
            let me = AgentId(a);
            let kind = ItemKind(rng.gen_range(0..2));
            match held[a as usize] {
                None if rng.gen_bool(0.5) => {
                    let expect = slot.stored_kind == Some(kind) && slot.writer.is_none() && slot.reserved < slot.count;
                    let got = slot.try_acquire_read(me, kind, t as u64);
                    if got.is_granted() != expect {
                        return Err(format!("script {s} step {t}: read grant {got:?}, model says {expect}"));
                    }
                    if expect {
                        held[a as usize] = Some(LockKind::Read);
                    }
                }
                None => {
                    let expect = slot.writer.is_none() && slot.readers.is_empty();
                    let got = slot.try_acquire_write(me);
                    if got.is_granted() != expect {
                        return Err(format!("script {s} step {t}: write grant {got:?}, model says {expect}"));
                    }
                    if expect {
                        held[a as usize] = Some(LockKind::Write);
                    }
                }
                Some(LockKind::Read) => {
                    let before = slot.count;
                    slot.release_on_arrival(me).map_err(|e| e.to_string())?;
                    slot.withdraw_one(t as u64).map_err(|e| format!("script {s} step {t}: {e}"))?;
                    if slot.count + 1 != before {
                        return Err(format!("script {s} step {t}: withdraw did not take exactly one item"));
                    }
                    held[a as usize] = None;
                }
                Some(LockKind::Write) => {
                    slot.release_on_arrival(me).map_err(|e| e.to_string())?;
                    if slot.count == 0 {
                        slot.deposit(kind, rng.gen_range(1..=capacity), t as u64).map_err(|e| e.to_string())?;
                    } else {
                        slot.withdraw_all().map_err(|e| e.to_string())?;
                    }
                    held[a as usize] = None;
                }
            }
            slot.check_invariants().map_err(|e| format!("script {s} step {t}: {e}"))?;
            let writers = held.iter().filter(|h| **h == Some(LockKind::Write)).count();
            let readers = held.iter().filter(|h| **h == Some(LockKind::Read)).count();
            if writers > 1 || (writers == 1 && readers > 0) || readers != slot.reserved as usize {
                return Err(format!(
                    "script {s} step {t}: {writers} writers, {readers} readers, reserved {}",
                    slot.reserved
                ));
            }
        }
    }
    Ok(())
}

fn criterion_2(runs: &[FuzzRun]) -> Verdict {
    let fired: Vec<String> = runs
        .iter()
        .filter_map(|r| match &r.result {
            Err(e @ SimError::Invariant { .. }) | Err(e @ SimError::Assign(_)) | Err(e @ SimError::Cache(_)) => {
                Some(format!("seed {}: {e}", r.config.seed))
            }
            _ => None,
        })
        .collect();
    let checked = runs.iter().all(|r| r.config.check_invariants);
    let scripts = lock_interleavings(2_000, 200);
    verdict(
        fired.is_empty() && checked && scripts.is_ok(),
        format!(
            "tick assertions fired in {} of {} runs {:?}; 2000 scripted interleavings: {}",
            fired.len(),
            runs.len(),
            fired.first(),
            scripts.err().unwrap_or_else(|| "ok".into())
        ),
    )
}

fn has_cycle(edges: &[(AgentStatus, AgentStatus)]) -> bool {
    fn visit(n: AgentStatus, edges: &[(AgentStatus, AgentStatus)], state: &mut [u8; 6]) -> bool {
        match state[n.index()] {
            1 => return true,
            2 => return false,
            _ => {}
        }
        state[n.index()] = 1;
        for &(_, to) in edges.iter().filter(|(from, _)| *from == n) {
            if visit(to, edges, state) {
                return true;
            }
        }
        state[n.index()] = 2;
        false
    }
    let mut state = [0u8; 6];
    AgentStatus::ALL.iter().any(|&s| visit(s, edges, &mut state))
}

fn criterion_3() -> Verdict {
    use AgentStatus::*;
    let expected: BTreeSet<(AgentStatus, AgentStatus)> = [
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
    .into_iter()
    .collect();
    let graph = state_graph();
    let exact = graph.iter().copied().collect::<BTreeSet<_>>() == expected && graph.len() == expected.len();
    let without_up_end: Vec<_> = graph.iter().copied().filter(|&(a, b)| a != UpEnd && b != UpEnd).collect();
    let acyclic = !has_cycle(&without_up_end);
    let full_has_cycle = has_cycle(&graph);

    // No blocking primitive or retry loop in the lock and assignment code.
    let sources = [("cache.rs", include_str!("../src/cache.rs")), ("assigner.rs", include_str!("../src/assigner.rs"))];
    let forbidden = ["loop {", "while ", "Mutex", "Condvar", "RwLock", "sleep(", "park(", ".wait(", "recv("];
    let mut hits = Vec::new();
    for (name, src) in sources {
        let code = src.split("#[cfg(test)]").next().unwrap_or(src);
        for token in forbidden {
            if code.contains(token) {
                hits.push(format!("{name}: {token}"));
            }
        }
    }
    // The only statuses are the six travelling ones: no waiting state.
    let no_wait_state = AgentStatus::ALL.len() == 6
        && AgentStatus::ALL.iter().all(|s| s.targets_cache() || matches!(s, SfGet | SfAdd | UpEnd));

    // A denied try falls straight through to the next case.
    let map = GridMap::parse("type warehouse\nheight 1\nwidth 5\nmap\nUCC.B\n").unwrap();
    let mut caches = CacheGroup::new(0, &map, map.cache_locs(), 9, EvictionPolicy::Lru, 0).unwrap();
    caches.try_acquire_write(CacheId(0), AgentId(8)).unwrap();
    caches.try_acquire_write(CacheId(1), AgentId(9)).unwrap();
    let denied = caches.try_acquire_write(CacheId(0), AgentId(1)).unwrap() == LockOutcome::Denied;
    let mut ta = TaskAssigner::new(0, Coord::new(0, 0), caches, gen_mk(10, 1, 1, 0, PortId(0)).unwrap(), true, 10);
    let mut agent = AgentState::new(AgentId(1), 0, Coord::new(0, 0));
    agent.status = UpEnd;
    agent.carrying = Some((ItemKind(0), 1));
    let d = ta.on_up_end_arrival(&mut agent, Task { kind: ItemKind(0), port: PortId(0) }, &map, 1).unwrap();
    let falls_through = denied && d.assignment.case == Some(CascadeCase::Shelf) && agent.held_lock.is_none();

    verdict(
        exact && acyclic && full_has_cycle && hits.is_empty() && no_wait_state && falls_through,
        format!(
            "edge set exact: {exact}; acyclic without UP_END: {acyclic}; blocking constructs: {hits:?}; denied lock falls through: {falls_through}"
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = Vec::new();
    for _ in 0..50 {
        let m = rng.gen_range(1..=200usize);
        let kinds = rng.gen_range(1..=1600usize);
        let k = rng.gen_range(1..=kinds.min(m));
        let seed = rng.gen();
        let tasks: Vec<ItemKind> = gen_mk(m, k, kinds, seed, PortId(0)).unwrap().take_kinds(10 * m);
        if let Err(at) = verify_mk_window(&tasks, m, k) {
            bad.push(format!("M={m} K={k} kinds={kinds} seed={seed} window at {at}"));
        }
    }
    verdict(bad.is_empty(), format!("50 specs, {} violations {:?}", bad.len(), bad.first()))
}

/// One agent, one cache next to the port, a constant item kind.
fn hot_item_config(tasks: u64, carry: u32) -> SimConfig {
    let map = GridMap::parse(
        "type warehouse\nheight 5\nwidth 9\nmap\n.........\n.....B.B.\nUC.......\n.....B.B.\n.........\n",
    )
    .unwrap()
    .assign_item_kinds(5);
    let group = GroupConfig {
        port: Coord::new(2, 0),
        caches: vec![Coord::new(2, 1)],
        agents: AgentPlacement::Count(1),
        distribution: DistributionKind::Mk { window: 200, kinds_per_window: 1 },
    };
    let mut c = SimConfig::new(map.into(), vec![group]);
    c.task_limit = tasks;
    c.carry_capacity = carry;
    c.check_invariants = true;
    c
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let config = hot_item_config(200, 200);
    let result = sim::run(&config);
    let elapsed = start.elapsed();
    match result {
        Ok(m) => {
            let exact = m.hits == 199 && m.misses == 1 && m.hit_rate == 199.0 / 200.0;
            verdict(
                exact && elapsed < Duration::from_secs(1),
                format!(
                    "hits {}/{} (hit_rate {}), P=200 so one fill stores 199 items, {:.3}s",
                    m.hits,
                    m.completed,
                    m.hit_rate,
                    elapsed.as_secs_f64()
                ),
            )
        }
        Err(e) => verdict(false, e.to_string()),
    }
}

fn desk_inputs(tasks: u64) -> Inputs {
    let mut base = BaseSpec::new(common::fixture("desk_15x21.map"));
    base.tasks = tasks;
    base.rdd_table = Some(common::fixture("rdd_50.csv"));
    Inputs::load(&base).unwrap()
}

fn criterion_6(runs: &[FuzzRun]) -> Verdict {
    let allowed = [AgentStatus::SfGet, AgentStatus::UpEnd];
    let clean = |m: &SimMetrics| {
        let bad_status = m.trace.iter().any(|e| !allowed.contains(&e.status));
        let bad_ticks = m.status_ticks.iter().any(|(s, &n)| !allowed.contains(s) && n > 0);
        m.hits == 0 && !bad_status && !bad_ticks && m.cache.read_grants + m.cache.write_grants == 0
    };
    let mut problems = Vec::new();
    let mut checked = 0;
    for r in runs.iter().filter(|r| r.config.policy.is_none()) {
        if let Ok(m) = &r.result {
            checked += 1;
            if !clean(m) {
                problems.push(format!("fuzz seed {}", r.config.seed));
            }
        }
    }
    let inputs = desk_inputs(300);
    for dist in [DistChoice::Zhang, DistChoice::Mk, DistChoice::Rdd] {
        for seed in 0..3 {
            let point = Point { agents: Some(8), caches: Some(16), policy: PolicyChoice::None, dist, seed };
            let mut config = inputs.config(&point).unwrap();
            config.record_trace = true;
            checked += 1;
            match sim::run(&config) {
                Ok(m) if clean(&m) => {}
                Ok(_) => problems.push(format!("desk {dist} seed {seed}")),
                Err(e) => problems.push(format!("desk {dist} seed {seed}: {e}")),
            }
        }
    }
    verdict(
        problems.is_empty(),
        format!("{checked} NONE runs, {} with hits or cache statuses {:?}", problems.len(), problems.first()),
    )
}

struct TrendRow {
    caches: usize,
    seed: u64,
    lru: SimMetrics,
    none: SimMetrics,
}

fn desk_trend() -> Result<(Vec<TrendRow>, Duration), String> {
    let start = Instant::now();
    let inputs = desk_inputs(1000);
    let mut rows = Vec::new();
    for caches in [4, 8, 16] {
        for seed in 0..10 {
            let run = |policy| {
                let point = Point { agents: Some(8), caches: Some(caches), policy, dist: DistChoice::Zhang, seed };
                sim::run(&inputs.config(&point).unwrap())
                    .map_err(|e| format!("caches {caches} seed {seed} {policy}: {e}"))
            };
            rows.push(TrendRow { caches, seed, lru: run(PolicyChoice::Lru)?, none: run(PolicyChoice::None)? });
        }
    }
    Ok((rows, start.elapsed()))
}

fn criterion_7(trend: &Result<(Vec<TrendRow>, Duration), String>) -> Verdict {
    let (rows, elapsed) = match trend {
        Ok(t) => t,
        Err(e) => return verdict(false, e.clone()),
    };
    let means: Vec<(usize, f64)> = [4, 8, 16]
        .iter()
        .map(|&c| {
            let sel: Vec<f64> = rows.iter().filter(|r| r.caches == c).map(|r| r.lru.hit_rate).collect();
            (c, sel.iter().sum::<f64>() / sel.len() as f64)
        })
        .collect();
    let worst_inversion = means.windows(2).map(|w| w[0].1 - w[1].1).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        worst_inversion <= 0.02 && *elapsed < Duration::from_secs(120),
        format!(
            "mean LRU hit_rate by caches {}; worst inversion {:.4}; {:.1}s for both trend criteria",
            means.iter().map(|(c, h)| format!("{c}:{h:.4}")).collect::<Vec<_>>().join(" "),
            worst_inversion.max(0.0),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8(trend: &Result<(Vec<TrendRow>, Duration), String>) -> Verdict {
    let (rows, elapsed) = match trend {
        Ok(t) => t,
        Err(e) => return verdict(false, e.clone()),
    };
    let wins = rows.iter().filter(|r| r.lru.throughput >= r.none.throughput).count();
    let by_caches: Vec<String> = [4, 8, 16]
        .iter()
        .map(|&c| {
            format!("{c}:{}/10", rows.iter().filter(|r| r.caches == c && r.lru.throughput >= r.none.throughput).count())
        })
        .collect();
    let losses: Vec<String> = rows
        .iter()
        .filter(|r| r.lru.throughput < r.none.throughput)
        .map(|r| format!("c{}s{}", r.caches, r.seed))
        .collect();
    verdict(
        wins * 10 >= rows.len() * 7 && *elapsed < Duration::from_secs(120),
        format!("LRU >= NONE on {wins}/{} points ({}); losses {:?}", rows.len(), by_caches.join(" "), losses),
    )
}

fn run_bytes(config: &SimConfig) -> Result<(String, Vec<u8>), String> {
    let m = sim::run(config).map_err(|e| e.to_string())?;
    let mut trace = Vec::new();
    artifacts::write_trace_csv(&m.trace, &mut trace).map_err(|e| e.to_string())?;
    Ok((m.to_json(), trace))
}

fn criterion_9() -> Verdict {
    let mut configs: Vec<(String, SimConfig)> =
        (0..12).map(|s| (format!("fuzz {s}"), common::fuzz_config(s))).collect();
    let inputs = desk_inputs(300);
    for policy in [PolicyChoice::Lru, PolicyChoice::Fifo, PolicyChoice::Random] {
        let point = Point { agents: Some(8), caches: Some(8), policy, dist: DistChoice::Zhang, seed: 3 };
        let mut c = inputs.config(&point).unwrap();
        c.record_trace = true;
        configs.push((format!("desk {policy}"), c));
    }
    let mut differ = Vec::new();
    for (label, c) in &configs {
        let a = run_bytes(c);
        let b = run_bytes(c);
        if a.is_err() || a != b {
            differ.push(label.clone());
        }
    }
    verdict(differ.is_empty(), format!("{} configs run twice, {} differ {:?}", configs.len(), differ.len(), differ))
}

fn criterion_10(runs: &[FuzzRun]) -> Verdict {
    let mut bad = Vec::new();
    let mut checked = 0;
    for r in runs {
        if let Ok(m) = &r.result {
            checked += 1;
            let exact = m.makespan * m.agents as u64 == m.moves + m.waits
                && m.hits + m.misses == m.completed
                && m.throughput == m.completed as f64 / m.makespan as f64
                && m.completed == r.config.task_limit;
            if !exact || m.check_identities().is_err() {
                bad.push(r.config.seed);
            }
        }
    }
    verdict(
        bad.is_empty() && checked == runs.len(),
        format!("{checked} runs checked, {} violate an identity {:?}", bad.len(), bad),
    )
}

fn criterion_11() -> Verdict {
    let seed = 11;
    let hot = zhang_classes(10, seed).unwrap()[2].clone();
    let n = 100_000;
    let tasks = gen_zhang(10, seed, PortId(0)).unwrap().take_kinds(n);
    let freq = tasks.iter().filter(|k| hot.contains(k)).count() as f64 / n as f64;
    verdict(
        hot.len() == 1 && (freq - 0.70).abs() <= 0.01,
        format!("hot kind {:?} frequency {freq:.4} over {n} samples", hot),
    )
}

fn main() {
    let (runs, fuzz_time) = fuzz_suite();
    let trend = desk_trend();
    let results = [
        ("safety of fuzzed runs", criterion_1(&runs, fuzz_time)),
        ("lock invariants", criterion_2(&runs)),
        ("no-deadlock structure", criterion_3()),
        ("MK window oracle", criterion_4()),
        ("K=1 hot-item hit rate", criterion_5()),
        ("NONE baseline equivalence", criterion_6(&runs)),
        ("cache-count hit-rate trend", criterion_7(&trend)),
        ("LRU vs NONE throughput", criterion_8(&trend)),
        ("determinism", criterion_9()),
        ("accounting identities", criterion_10(&runs)),
        ("Zhang calibration", criterion_11()),
    ];
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        println!("criterion {:>2} {:<28} {}  {}", i + 1, name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {} failed", results.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
