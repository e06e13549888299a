//! Sweeps cache count and policy on the desk fixture.

use lmapf_cm::bench::{run_sweep, Axis, BaseSpec, DistChoice, PolicyChoice, SweepSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("lmapf-cm-sweep-example");
    let mut base = BaseSpec::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/desk_15x21.map"));
    base.tasks = 300;
    let spec = SweepSpec {
        base,
        agents: vec![6],
        caches: vec![4, 16],
        policies: vec![PolicyChoice::Lru, PolicyChoice::None],
        dists: vec![DistChoice::Zhang],
        seeds: (0..4).collect(),
        out: out.clone(),
        jobs: None,
        group_by: vec![Axis::Caches, Axis::Policy],
    };
    let rows = run_sweep(&spec)?;
    println!("{} points written under {}", rows.len(), out.display());
    print!("{}", std::fs::read_to_string(out.join("aggregate.csv"))?);
    Ok(())
}
