//! Plans a few steps of a crowded swap with PIBT and the greedy baseline.

use lmapf_cm::grid::{Coord, DistanceTable, GridMap};
use lmapf_cm::ids::AgentId;
use lmapf_cm::planner::{validate_step, PlanAgent, PlannerKind, Priority, StepRequest};

fn main() {
    let map = GridMap::parse("type warehouse\nheight 3\nwidth 6\nmap\n......\n.@@@@.\nB.....\n").unwrap();
    let pairs = [
        (Coord::new(0, 0), Coord::new(0, 5)),
        (Coord::new(0, 5), Coord::new(0, 0)),
        (Coord::new(2, 2), Coord::new(2, 5)),
    ];
    for kind in [PlannerKind::Pibt, PlannerKind::Greedy] {
        let planner = kind.build();
        let mut agents: Vec<PlanAgent> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(s, t))| PlanAgent {
                id: AgentId(i as u32),
                current: s,
                target: t,
                priority: Priority::new(AgentId(i as u32)),
            })
            .collect();
        let dist = DistanceTable::for_targets(&map, agents.iter().map(|a| a.target)).unwrap();
        let mut reached = vec![false; agents.len()];
        let mut step = 0;
        while step < 30 && reached.contains(&false) {
            let plan = planner.plan_step(&StepRequest { map: &map, distances: &dist, agents: &agents, seed: step });
            let before: Vec<Coord> = agents.iter().map(|a| a.current).collect();
            validate_step(&map, &before, &plan.moves).expect("planners never collide");
            for ((a, m), r) in agents.iter_mut().zip(plan.moves).zip(&mut reached) {
                *r |= m == a.target;
                a.priority.age = if m == a.target { 0 } else { a.priority.age + 1 };
                a.current = m;
            }
            step += 1;
        }
        let done = reached.iter().filter(|&&r| r).count();
        println!("{}: {done}/{} agents reached their target within {step} steps", planner.name(), agents.len());
    }
}
