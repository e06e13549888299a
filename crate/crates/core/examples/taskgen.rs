//! Samples the three task distributions and checks their shape.

use std::collections::BTreeMap;

use lmapf_cm::ids::PortId;
use lmapf_cm::taskgen::{gen_mk, gen_rdd, gen_zhang, verify_mk_window, zhang_classes, FrequencyTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kinds = 48;
    let mut mk = gen_mk(100, 4, kinds, 1, PortId(0))?;
    let tasks = mk.take_kinds(5000);
    println!("mk: window check {:?}, first ten {:?}", verify_mk_window(&tasks, 100, 4), &tasks[..10]);

    let [_, _, hot] = zhang_classes(kinds, 1)?;
    let mut zhang = gen_zhang(kinds, 1, PortId(0))?;
    let hot_share = zhang.take_kinds(20_000).iter().filter(|k| hot.contains(k)).count() as f64 / 20_000.0;
    println!("zhang: {} hot kinds draw {:.3} of tasks", hot.len(), hot_share);

    let table = FrequencyTable::from_csv("item_kind,weight\n9001,8\n9002,1\n9003,1\n")?;
    let mut rdd = gen_rdd(&table, kinds, 1, PortId(0))?;
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for k in rdd.take_kinds(10_000) {
        *counts.entry(k.0).or_default() += 1;
    }
    println!("rdd: counts by mapped kind {counts:?}");
    Ok(())
}
